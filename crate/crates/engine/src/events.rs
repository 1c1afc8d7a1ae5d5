//! Append-only per-task event log with replay-from-start subscriptions.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde_json::Value;
use tokio::sync::watch;

use crate::protocol::{EventKind, TaskEvent};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EventError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("task {0:?} already finished")]
    Finished(String),
}

#[derive(Default)]
struct Log {
    events: Vec<TaskEvent>,
    done: bool,
}

/// Concurrent event store. Sequence numbers are assigned under the lock, so
/// every task sees `1..=k` regardless of how many threads publish.
#[derive(Clone)]
pub struct EventStore {
    logs: Arc<Mutex<HashMap<String, Log>>>,
    // bumped on every publish so async subscribers can wait for news
    tick: Arc<watch::Sender<u64>>,
}

impl Default for EventStore {
    fn default() -> Self {
        let (tx, _) = watch::channel(0);
        Self { logs: Arc::default(), tick: Arc::new(tx) }
    }
}

impl EventStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event and returns its sequence number. Publishing after a
    /// terminal event is refused.
    pub fn publish(&self, task_id: &str, kind: EventKind, body: Value) -> Result<u64, EventError> {
        let seq = {
            let mut logs = self.logs.lock().expect("event store poisoned");
            let log = logs.entry(task_id.to_string()).or_default();
            if log.done {
                return Err(EventError::Finished(task_id.into()));
            }
            let seq = log.events.len() as u64 + 1;
            log.events.push(TaskEvent { task_id: task_id.into(), seq, kind, body });
            log.done = kind.is_terminal();
            seq
        };
        self.tick.send_modify(|t| *t += 1);
        Ok(seq)
    }

    pub fn contains(&self, task_id: &str) -> bool {
        self.logs.lock().expect("event store poisoned").contains_key(task_id)
    }

    /// Events from `from_seq` on (1-based) and whether the task has finished.
    pub fn since(&self, task_id: &str, from_seq: u64) -> Result<(Vec<TaskEvent>, bool), EventError> {
        let logs = self.logs.lock().expect("event store poisoned");
        let log = logs.get(task_id).ok_or_else(|| EventError::UnknownTask(task_id.into()))?;
        let skip = from_seq.saturating_sub(1) as usize;
        Ok((log.events.iter().skip(skip).cloned().collect(), log.done))
    }

    pub fn events(&self, task_id: &str) -> Result<Vec<TaskEvent>, EventError> {
        self.since(task_id, 1).map(|(e, _)| e)
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.tick.subscribe()
    }

    /// All prior events of a task, then live ones, ending after the
    /// terminal event. An unknown task yields one `Err`, unless
    /// `wait_for_start` is set, in which case the stream waits for it.
    pub fn stream(
        &self,
        task_id: String,
        wait_for_start: bool,
    ) -> impl futures::Stream<Item = Result<TaskEvent, EventError>> + Send + 'static {
        let start = Some((self.clone(), self.subscribe(), task_id, 1u64));
        futures::stream::unfold(start, move |state| async move {
            let (store, mut rx, id, next) = state?;
            loop {
                // mark the current tick seen before reading, so no publish is missed
                rx.borrow_and_update();
                match store.since(&id, next) {
                    Err(e) if !wait_for_start => return Some((Err(e), None)),
                    Err(_) => {
                        if rx.changed().await.is_err() {
                            return None;
                        }
                    }
                    Ok((events, _)) if !events.is_empty() => {
                        let e = events.into_iter().next().expect("non-empty");
                        let more = !e.kind.is_terminal();
                        return Some((Ok(e), more.then_some((store, rx, id, next + 1))));
                    }
                    Ok(_) => {
                        if rx.changed().await.is_err() {
                            return None;
                        }
                    }
                }
            }
        })
    }
}
