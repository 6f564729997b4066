//! Exit codes and error rendering.

use serde_json::json;

/// 2 usage, 3 data, 4 numerical.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data { message: String, row: Option<usize> },
    Numerical { message: String, stage: Option<String> },
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Failure::Data { message: msg.into(), row: None }
    }

    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data { .. } => 3,
            Failure::Numerical { .. } => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data { .. } => "data",
            Failure::Numerical { .. } => "numerical",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) => m,
            Failure::Data { message, .. } | Failure::Numerical { message, .. } => message,
        }
    }

    pub fn report(&self, json_errors: bool) {
        if json_errors {
            let mut v = json!({
                "error": self.kind(),
                "exit_code": self.code(),
                "message": self.message(),
            });
            match self {
                Failure::Data { row: Some(r), .. } => v["row"] = json!(r),
                Failure::Numerical { stage: Some(s), .. } => v["stage"] = json!(s),
                _ => {}
            }
            eprintln!("{v}");
        } else {
            eprintln!("error: {}", self.message());
        }
    }
}

impl From<dmfpca::Error> for Failure {
    fn from(e: dmfpca::Error) -> Self {
        use dmfpca::Error as E;
        let stage = match &e {
            E::Stage { stage, .. } => Some(stage.to_string()),
            _ => None,
        };
        let message = e.to_string();
        match e.root() {
            E::Data { row, .. } => Failure::Data { message, row: Some(*row) },
            E::Io(_) | E::Csv(_) | E::OutOfDomain { .. } => Failure::Data { message, row: None },
            E::InvalidArgument(_) => Failure::Usage(message),
            _ => Failure::Numerical { message, stage },
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::data(format!("JSON: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::data(e.to_string())
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;
