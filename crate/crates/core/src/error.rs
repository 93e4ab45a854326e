use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoopError {
    #[error("instance must have an even, non-zero number of tasks (got {0})")]
    OddTaskCount(usize),
    #[error("pose out of workspace: {0}")]
    PoseOutOfWorkspace(String),
    #[error("joint action {0} is infeasible")]
    InfeasibleAction(String),
    #[error("task {0} is already done")]
    TaskAlreadyDone(usize),
    #[error("both arms assigned task {0}")]
    SameTaskAssigned(usize),
    #[error("action index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("{0} tasks remain undone")]
    TasksRemaining(usize),
    #[error("episode log has no final status")]
    IncompleteLog,
    #[error("planning budget exceeded after {0:.1} s")]
    BudgetExceeded(f64),
    #[error("instance is unsolvable: {0}")]
    Unsolvable(String),
    #[error("no feasible matching order found")]
    MatchingInfeasible,
    #[error("could not place {0} well-separated objects")]
    SamplingExhausted(usize),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("unsupported ablation axis `{0}`")]
    UnsupportedAxis(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] coop_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoopError {
    /// Stable snake_case name of the variant, for machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            CoopError::OddTaskCount(_) => "odd_task_count",
            CoopError::PoseOutOfWorkspace(_) => "pose_out_of_workspace",
            CoopError::InfeasibleAction(_) => "infeasible_action",
            CoopError::TaskAlreadyDone(_) => "task_already_done",
            CoopError::SameTaskAssigned(_) => "same_task_assigned",
            CoopError::IndexOutOfRange { .. } => "index_out_of_range",
            CoopError::TasksRemaining(_) => "tasks_remaining",
            CoopError::IncompleteLog => "incomplete_log",
            CoopError::BudgetExceeded(_) => "budget_exceeded",
            CoopError::Unsolvable(_) => "unsolvable",
            CoopError::MatchingInfeasible => "matching_infeasible",
            CoopError::SamplingExhausted(_) => "sampling_exhausted",
            CoopError::Diverged(_) => "diverged",
            CoopError::MissingCheckpoint(_) => "missing_checkpoint",
            CoopError::UnsupportedAxis(_) => "unsupported_axis",
            CoopError::InvalidConfig(_) => "invalid_config",
            CoopError::Format(_) => "format",
            CoopError::Nn(_) => "nn",
            CoopError::Io(_) => "io_failure",
            CoopError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, CoopError>;
