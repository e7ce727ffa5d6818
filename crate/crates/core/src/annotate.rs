//! Dependency annotation through an external chat-completion service.
//!
//! Offline graph files bypass this module entirely.

use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde_json::json;
use thiserror::Error;

use crate::table::{FeatureKind, Schema};

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("annotation request needs at least one feature")]
    NoFeatures,
    #[error("timeout must be positive")]
    ZeroTimeout,
    #[error("service answered HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("response has no message text")]
    EmptyResponse,
    #[error("could not archive response to {path}: {source}")]
    Archive {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone)]
pub struct AnnotationRequest {
    pub dataset_description: String,
    /// Numerical features first, then categorical.
    pub feature_names: Vec<String>,
    pub endpoint: String,
    pub model_name: String,
    pub auth_token: String,
    pub timeout: Duration,
}

impl std::fmt::Debug for AnnotationRequest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnotationRequest")
            .field("dataset_description", &self.dataset_description)
            .field("feature_names", &self.feature_names)
            .field("endpoint", &self.endpoint)
            .field("model_name", &self.model_name)
            .field("auth_token", &"<redacted>")
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl AnnotationRequest {
    pub fn validate(&self) -> Result<(), AnnotateError> {
        if self.feature_names.is_empty() {
            return Err(AnnotateError::NoFeatures);
        }
        if self.timeout.is_zero() {
            return Err(AnnotateError::ZeroTimeout);
        }
        Ok(())
    }
}

/// Schema order, with numerical features moved ahead of categorical ones.
pub fn prompt_feature_order(schema: &Schema) -> Vec<String> {
    let pick = |kind| {
        schema
            .features()
            .iter()
            .filter(move |f| f.kind == kind)
            .map(|f| f.name.clone())
    };
    pick(FeatureKind::Numerical).chain(pick(FeatureKind::Categorical)).collect()
}

pub fn build_prompt(request: &AnnotationRequest) -> String {
    format!(
        "Given a tabular dataset with the following description:\n\
         \"{description}\"\n\
         \n\
         The dataset holds the following features, represented in numbers or text strings:\n\
         {features}\n\
         \n\
         Please list the constraints for each feature based on the others. \
         Return the results in the following format: for each feature, first output the feature name \
         followed by a colon, and then a set of constraints represented by square brackets. \
         The `->` symbol indicates that the former is the cause and the latter is the effect. \
         Different constraints should be separated by commas.\n\
         \n\
         Here is an example:\n\
         Feature A: [Feature B->Feature A, Feature C->Feature A]\n\
         This means that both Feature B and Feature C determine the range of Feature A.\n\
         \n\
         Please leave it blank if there is no relation between a feature and others.",
        description = request.dataset_description,
        features = request.feature_names.join(", "),
    )
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the first retry; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

/// Where the raw response for `graph_path` is archived.
pub fn archive_path_for(graph_path: &Path) -> PathBuf {
    let mut name = graph_path.file_name().unwrap_or_default().to_os_string();
    name.push(".response.txt");
    graph_path.with_file_name(name)
}

enum Failure {
    Transient(AnnotateError),
    Fatal(AnnotateError),
}

fn attempt(client: &reqwest::blocking::Client, request: &AnnotationRequest, body: &serde_json::Value) -> Result<String, Failure> {
    let sent = client
        .post(&request.endpoint)
        .bearer_auth(&request.auth_token)
        .json(body)
        .send();
    let resp = match sent {
        Ok(r) => r,
        Err(e) if e.is_timeout() => return Err(Failure::Transient(AnnotateError::Timeout)),
        Err(e) if e.is_connect() || e.is_request() => {
            return Err(Failure::Transient(AnnotateError::Transport(e.to_string())))
        }
        Err(e) => return Err(Failure::Fatal(AnnotateError::Transport(e.to_string()))),
    };
    let status = resp.status();
    let text = resp.text().map_err(|e| {
        if e.is_timeout() {
            Failure::Transient(AnnotateError::Timeout)
        } else {
            Failure::Transient(AnnotateError::Transport(e.to_string()))
        }
    })?;
    if !status.is_success() {
        let err = AnnotateError::Status {
            status: status.as_u16(),
            body: text.chars().take(200).collect(),
        };
        return Err(if status.is_server_error() || status.as_u16() == 429 {
            Failure::Transient(err)
        } else {
            Failure::Fatal(err)
        });
    }
    let parsed: serde_json::Value = serde_json::from_str(&text).map_err(|_| Failure::Fatal(AnnotateError::EmptyResponse))?;
    match parsed.pointer("/choices/0/message/content").and_then(|c| c.as_str()) {
        Some(s) if !s.trim().is_empty() => Ok(s.to_string()),
        _ => Err(Failure::Fatal(AnnotateError::EmptyResponse)),
    }
}

/// Sends the prompt and returns the assistant text verbatim. Server errors,
/// 429s, timeouts and connection failures are retried with exponential
/// backoff. When `archive` is given the text is written there before
/// returning.
pub fn request_annotation(
    request: &AnnotationRequest,
    policy: RetryPolicy,
    archive: Option<&Path>,
) -> Result<String, AnnotateError> {
    request.validate()?;
    let client = reqwest::blocking::Client::builder()
        .timeout(request.timeout)
        .build()
        .map_err(|e| AnnotateError::Transport(e.to_string()))?;
    let body = json!({
        "model": request.model_name,
        "messages": [{"role": "user", "content": build_prompt(request)}],
    });
    let attempts = policy.attempts.max(1);
    let mut delay = policy.base_delay;
    let mut last = None;
    for i in 0..attempts {
        if i > 0 {
            thread::sleep(delay);
            delay *= 2;
        }
        match attempt(&client, request, &body) {
            Ok(text) => {
                if let Some(path) = archive {
                    std::fs::write(path, &text).map_err(|source| AnnotateError::Archive {
                        path: path.display().to_string(),
                        source,
                    })?;
                }
                return Ok(text);
            }
            Err(Failure::Fatal(e)) => return Err(e),
            Err(Failure::Transient(e)) => {
                log::warn!("annotation attempt {} of {attempts} failed: {e}", i + 1);
                last = Some(e);
            }
        }
    }
    Err(AnnotateError::Exhausted {
        attempts,
        last: last.map(|e| e.to_string()).unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(description: &str, features: &[&str]) -> AnnotationRequest {
        AnnotationRequest {
            dataset_description: description.into(),
            feature_names: features.iter().map(|s| s.to_string()).collect(),
            endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
            model_name: "m".into(),
            auth_token: "secret".into(),
            timeout: Duration::from_secs(5),
        }
    }

    #[test]
    fn prompt_contains_description_and_features() {
        let p = build_prompt(&request("census data", &["age", "income"]));
        assert!(p.starts_with("Given a tabular dataset with the following description"));
        assert!(p.contains("\"census data\""));
        assert!(p.contains("age, income\n"));
    }

    #[test]
    fn empty_description_is_allowed() {
        let p = build_prompt(&request("", &["a"]));
        assert!(p.contains("description:\n\"\"\n"));
    }

    #[test]
    fn every_feature_appears_once() {
        let names: Vec<String> = (0..24).map(|i| format!("Feature{i:02}X")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let p = build_prompt(&request("credit", &refs));
        for n in &names {
            assert_eq!(p.matches(n.as_str()).count(), 1, "{n}");
        }
        assert_eq!(p, build_prompt(&request("credit", &refs)));
    }

    #[test]
    fn numerical_features_come_first() {
        use crate::table::Feature;
        let f = |n: &str, kind| Feature { name: n.into(), kind };
        let schema = Schema::new(vec![
            f("c1", FeatureKind::Categorical),
            f("n1", FeatureKind::Numerical),
            f("c2", FeatureKind::Categorical),
            f("n2", FeatureKind::Numerical),
        ])
        .unwrap();
        assert_eq!(prompt_feature_order(&schema), ["n1", "n2", "c1", "c2"]);
    }

    #[test]
    fn invalid_requests() {
        assert!(matches!(request("x", &[]).validate(), Err(AnnotateError::NoFeatures)));
        let mut r = request("x", &["a"]);
        r.timeout = Duration::ZERO;
        assert!(matches!(r.validate(), Err(AnnotateError::ZeroTimeout)));
        assert!(!format!("{r:?}").contains("secret"));
    }

    #[test]
    fn archive_sits_beside_graph() {
        assert_eq!(archive_path_for(Path::new("out/iris.graph")), Path::new("out/iris.graph.response.txt"));
    }
}
