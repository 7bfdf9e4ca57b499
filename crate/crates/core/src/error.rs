use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numerical failure in {context}")]
    Numerical { context: String },

    #[error("numerical failure in hypothesis {index}: {source}")]
    Hypothesis {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("time {t} precedes the first schedule segment at {start}")]
    ScheduleLookup { t: f64, start: f64 },

    #[error("tick {tick} ({module}): {source}")]
    Tick {
        tick: usize,
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn numerical(context: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
