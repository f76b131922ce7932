//! Efficient global optimization of expensive black-box functions.
//!
//! The pipeline starts from a Latin hypercube design, fits a Kriging
//! surrogate with a Gaussian kernel and nugget, and then repeatedly proposes
//! batches of points that maximize expected improvement (analytic EI, or
//! Monte-Carlo batch EI for parallel evaluation). Parameters may be warped
//! (`log10`, logit) before being normalized to the unit cube. A sequential
//! ANOVA on a linear model gives a post-hoc sensitivity ranking.

pub mod acquisition;
pub mod benchbox;
pub mod doe;
pub mod driver;
pub mod error;
pub mod gp;
pub mod numerics;
pub mod optim;
pub mod search_space;
pub mod seed;
pub mod sensitivity;

pub use acquisition::{
    expected_improvement, propose_batch, q_expected_improvement, AcquisitionContext,
    AcquisitionKind, ProposalBatch, QeiEstimate, SearchBudget,
};
pub use doe::{design_to_raw, lhs_sample, DesignMatrix};
pub use driver::{
    initial_design, BatchRecord, BudgetPlan, Direction, DriverConfig, EgoDriver, EvalContext,
    EvalError, Evaluator, FinalModel, Observation, Phase, PhaseSummary, RunError, RunHistory,
    RunOutcome, Status,
};
pub use error::{Error, Result};
pub use gp::{kernel_matrix, nlml, FitConfig, GpModel, KernelParams, Posterior};
pub use numerics::Matrix;
pub use search_space::{ParameterSpec, SearchSpace, Warp};
pub use sensitivity::{
    ablation, anova_sequential, fit_linear, ss_percentages, AblationRow, AnovaRow, AnovaTable,
};
