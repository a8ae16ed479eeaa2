//! Chat-completion client contract and a scripted test double.

use parking_lot::Mutex;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("chat client failed: {0}")]
pub struct ClientError(pub String);

/// Takes a prompt and returns the model's response text.
pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ClientError>;
}

impl<T: ChatClient + ?Sized> ChatClient for std::sync::Arc<T> {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        (**self).complete(prompt)
    }
}

impl<T: ChatClient + ?Sized> ChatClient for &T {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        (**self).complete(prompt)
    }
}

/// Replays canned responses in order; the last one repeats once the script
/// runs out. Records every prompt it receives.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    responses: Vec<Result<String, ClientError>>,
    state: Mutex<ScriptState>,
}

#[derive(Debug, Default)]
struct ScriptState {
    next: usize,
    prompts: Vec<String>,
}

impl ScriptedClient {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_results(responses.into_iter().map(|s| Ok(s.into())))
    }

    pub fn with_results<I>(responses: I) -> Self
    where
        I: IntoIterator<Item = Result<String, ClientError>>,
    {
        let responses: Vec<_> = responses.into_iter().collect();
        assert!(!responses.is_empty(), "scripted client needs at least one response");
        ScriptedClient {
            responses,
            state: Mutex::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.state.lock().prompts.len()
    }

    pub fn prompts(&self) -> Vec<String> {
        self.state.lock().prompts.clone()
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let mut state = self.state.lock();
        state.prompts.push(prompt.to_string());
        let idx = state.next.min(self.responses.len() - 1);
        state.next += 1;
        self.responses[idx].clone()
    }
}

/// Substitutes `{key}` placeholders in one left-to-right pass, so text
/// inside substituted values is never expanded again.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = values.iter().find(|(key, _)| {
            tail.len() > key.len() + 1
                && tail[1..].starts_with(key)
                && tail[1 + key.len()..].starts_with('}')
        });
        match hit {
            Some((key, value)) => {
                out.push_str(value);
                rest = &tail[key.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Returns the fenced block that follows `marker` (which must end with the
/// opening fence line), up to the closing fence at the end of the prompt.
pub(crate) fn block_after<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    let start = prompt.find(marker)? + marker.len();
    let rest = &prompt[start..];
    rest.strip_suffix('\n').unwrap_or(rest).strip_suffix("\n```")
}
