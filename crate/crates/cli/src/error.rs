use symexec_core::contracts::ContractError;
use symexec_core::engine::EngineError;
use symexec_core::kernel::ReplayError;
use symexec_core::text::ParseError;
use symexec_core::timing::TimingError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("no exit within {0} steps")]
    Truncated(usize),
    #[error("{0}")]
    Soundness(String),
}

impl CliError {
    /// Machine-readable class printed before the detail.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Io { .. } => "IoError",
            CliError::Parse(ParseError::Syntax { .. }) => "SyntaxError",
            CliError::Parse(_) => "TypeError",
            CliError::Engine(e) | CliError::Timing(TimingError::Engine(e)) => engine_class(e),
            CliError::Contract(ContractError::Engine(e)) => engine_class(e),
            CliError::Timing(TimingError::UnboundedCounter(_)) => "UnboundedCounter",
            CliError::Timing(TimingError::VariableCReserved) => "VariableCReserved",
            CliError::Timing(_) => "TimingError",
            CliError::Contract(ContractError::Relational(_)) => "RelationalContract",
            CliError::Contract(ContractError::Type(_)) => "TypeError",
            CliError::Contract(ContractError::Syntax { .. } | ContractError::Missing(_)) => {
                "SyntaxError"
            }
            CliError::Contract(ContractError::Expr { source, .. }) => match source {
                ParseError::Syntax { .. } => "SyntaxError",
                _ => "TypeError",
            },
            CliError::Contract(_) => "ContractError",
            CliError::Replay(_) => "ReplayFailed",
            CliError::Truncated(_) => "Truncated",
            CliError::Soundness(_) => "SoundnessViolation",
        }
    }

    /// 1 for analysis failures, 2 for bad input, 3 for budgets and
    /// undecided queries.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "UsageError" | "IoError" | "SyntaxError" | "TypeError" | "RelationalContract"
            | "VariableCReserved" => 2,
            "BudgetExhausted" | "SolverUnknown" | "Truncated" => 3,
            _ => 1,
        }
    }
}

fn engine_class(e: &EngineError) -> &'static str {
    match e {
        EngineError::BudgetExhausted { .. } => "BudgetExhausted",
        EngineError::SolverUnknown(_) => "SolverUnknown",
        EngineError::NotInFragment => "UsageError",
        EngineError::CannotAlign(_) => "CannotAlign",
        EngineError::CannotDecideAliasing(_) => "CannotDecideAliasing",
        EngineError::Rule(_) => "RuleError",
        _ => "EngineError",
    }
}
