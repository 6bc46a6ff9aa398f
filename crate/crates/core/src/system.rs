//! System graphs: objects with per-instance attribute snapshots and
//! time-stamped events between them, built from JSON Lines traces.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::Deserialize;
use thiserror::Error;

use crate::predicates::EvalContext;
use crate::value::Value;

/// Reserved event parameter holding the instance index.
pub const TIME_PARAM: &str = "time";
/// Reserved object attribute holding the object id.
pub const ID_ATTR: &str = "id";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("event at instance {time} references object `{id}` which has not been declared")]
    UnknownObject { id: String, time: u64 },
    #[error("record at instance {got} follows instance {prev}; times must not decrease")]
    DecreasingTime { prev: u64, got: u64 },
    #[error("event parameter `time` is reserved and injected from the record's instance")]
    ReservedTime,
    #[error("object `{id}` declares a different `id` attribute ({attr})")]
    IdMismatch { id: String, attr: String },
    #[error("object `{id}` already has different attributes at instance {time}")]
    SnapshotConflict { id: String, time: u64 },
}

/// One line of a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceRecord {
    Object {
        time: u64,
        id: String,
        attrs: EvalContext,
    },
    Event {
        time: u64,
        src: String,
        dest: String,
        params: EvalContext,
    },
}

impl TraceRecord {
    pub fn time(&self) -> u64 {
        match self {
            TraceRecord::Object { time, .. } | TraceRecord::Event { time, .. } => *time,
        }
    }

    pub fn object(time: u64, id: &str, attrs: impl IntoIterator<Item = (&'static str, Value)>) -> Self {
        TraceRecord::Object {
            time,
            id: id.to_string(),
            attrs: attrs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn event(
        time: u64,
        src: &str,
        dest: &str,
        params: impl IntoIterator<Item = (&'static str, Value)>,
    ) -> Self {
        TraceRecord::Event {
            time,
            src: src.to_string(),
            dest: dest.to_string(),
            params: params.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    /// Parses one JSON Lines record.
    pub fn from_json_line(line: &str) -> Result<Self, String> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            t: u64,
            object: Option<RawObject>,
            event: Option<RawEvent>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawObject {
            id: String,
            #[serde(default)]
            attrs: serde_json::Map<String, serde_json::Value>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawEvent {
            src: String,
            dest: String,
            #[serde(default)]
            params: serde_json::Map<String, serde_json::Value>,
        }
        fn context(map: serde_json::Map<String, serde_json::Value>) -> Result<EvalContext, String> {
            map.into_iter()
                .map(|(k, v)| {
                    Value::from_json(&v)
                        .map(|v| (k.clone(), v))
                        .map_err(|e| format!("`{k}`: {e}"))
                })
                .collect()
        }

        let raw: Raw = serde_json::from_str(line).map_err(|e| e.to_string())?;
        match (raw.object, raw.event) {
            (Some(o), None) => Ok(TraceRecord::Object {
                time: raw.t,
                id: o.id,
                attrs: context(o.attrs)?,
            }),
            (None, Some(e)) => Ok(TraceRecord::Event {
                time: raw.t,
                src: e.src,
                dest: e.dest,
                params: context(e.params)?,
            }),
            _ => Err("record must have exactly one of `object` or `event`".into()),
        }
    }

    pub fn to_json_line(&self) -> String {
        fn context(c: &EvalContext) -> serde_json::Value {
            serde_json::Value::Object(c.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
        }
        let v = match self {
            TraceRecord::Object { time, id, attrs } => serde_json::json!({
                "t": time,
                "object": { "id": id, "attrs": context(attrs) },
            }),
            TraceRecord::Event {
                time,
                src,
                dest,
                params,
            } => serde_json::json!({
                "t": time,
                "event": { "src": src, "dest": dest, "params": context(params) },
            }),
        };
        v.to_string()
    }
}

/// Reads every record of a JSON Lines trace. Blank lines and lines starting
/// with `#` are skipped.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<TraceRecord>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IngestError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(
            TraceRecord::from_json_line(&line)
                .map_err(|message| IngestError::Malformed { line: i + 1, message })?,
        );
    }
    Ok(out)
}

/// An object at one instance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SnapshotRef {
    pub id: String,
    pub time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemEvent {
    pub src: String,
    pub dest: String,
    pub time: u64,
    /// Includes the injected `time` parameter.
    pub params: EvalContext,
}

/// What applying one record changed, for rollback.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Applied {
    Object { new_snapshot: Option<SnapshotRef> },
    Event { index: usize, carried: Vec<SnapshotRef> },
}

impl Applied {
    /// Snapshots this record added to the graph.
    pub fn new_snapshots(&self) -> Vec<SnapshotRef> {
        match self {
            Applied::Object { new_snapshot } => new_snapshot.iter().cloned().collect(),
            Applied::Event { carried, .. } => carried.clone(),
        }
    }
}

/// Overlay of all system instances seen so far.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SystemGraph {
    snapshots: BTreeMap<String, BTreeMap<u64, EvalContext>>,
    events: Vec<SystemEvent>,
    horizon: u64,
}

impl SystemGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a system graph from a complete trace.
    pub fn ingest<I: IntoIterator<Item = TraceRecord>>(records: I) -> Result<Self, IngestError> {
        let mut g = SystemGraph::new();
        for r in records {
            g.apply(r)?;
        }
        Ok(g)
    }

    pub fn events(&self) -> &[SystemEvent] {
        &self.events
    }

    pub fn event(&self, index: usize) -> &SystemEvent {
        &self.events[index]
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn object_count(&self) -> usize {
        self.snapshots.len()
    }

    pub fn object_ids(&self) -> impl Iterator<Item = &str> {
        self.snapshots.keys().map(String::as_str)
    }

    /// Every materialised (object, instance) snapshot, ordered by id then time.
    pub fn snapshots(&self) -> impl Iterator<Item = (SnapshotRef, &EvalContext)> {
        self.snapshots.iter().flat_map(|(id, by_time)| {
            by_time.iter().map(move |(t, attrs)| {
                (
                    SnapshotRef {
                        id: id.clone(),
                        time: *t,
                    },
                    attrs,
                )
            })
        })
    }

    pub fn snapshot(&self, id: &str, time: u64) -> Option<&EvalContext> {
        self.snapshots.get(id)?.get(&time)
    }

    /// Attributes of the event's source object at the event's instance.
    pub fn src_attr(&self, index: usize) -> &EvalContext {
        let e = &self.events[index];
        &self.snapshots[&e.src][&e.time]
    }

    /// Attributes of the event's destination object at the event's instance.
    pub fn dest_attr(&self, index: usize) -> &EvalContext {
        let e = &self.events[index];
        &self.snapshots[&e.dest][&e.time]
    }

    fn check_time(&self, time: u64) -> Result<(), IngestError> {
        if time < self.horizon {
            return Err(IngestError::DecreasingTime {
                prev: self.horizon,
                got: time,
            });
        }
        Ok(())
    }

    /// Applies one record, returning what changed.
    pub fn apply(&mut self, record: TraceRecord) -> Result<Applied, IngestError> {
        self.check_time(record.time())?;
        match record {
            TraceRecord::Object { time, id, mut attrs } => {
                match attrs.get(ID_ATTR) {
                    Some(Value::Text(s)) if *s == id => {}
                    Some(other) => {
                        return Err(IngestError::IdMismatch {
                            id,
                            attr: other.to_string(),
                        })
                    }
                    None => {
                        attrs.insert(ID_ATTR.to_string(), Value::Text(id.clone()));
                    }
                }
                let by_time = self.snapshots.entry(id.clone()).or_default();
                let new_snapshot = match by_time.get(&time) {
                    Some(existing) if *existing == attrs => None,
                    Some(_) => return Err(IngestError::SnapshotConflict { id, time }),
                    None => {
                        by_time.insert(time, attrs);
                        Some(SnapshotRef { id, time })
                    }
                };
                self.horizon = self.horizon.max(time);
                Ok(Applied::Object { new_snapshot })
            }
            TraceRecord::Event {
                time,
                src,
                dest,
                mut params,
            } => {
                if params.contains_key(TIME_PARAM) {
                    return Err(IngestError::ReservedTime);
                }
                for id in [&src, &dest] {
                    let declared = self
                        .snapshots
                        .get(id)
                        .is_some_and(|by_time| by_time.range(..=time).next().is_some());
                    if !declared {
                        return Err(IngestError::UnknownObject { id: id.clone(), time });
                    }
                }
                let mut carried = Vec::new();
                for id in [&src, &dest] {
                    let by_time = self.snapshots.get_mut(id).expect("checked above");
                    if !by_time.contains_key(&time) {
                        let (_, last) = by_time.range(..time).next_back().expect("checked above");
                        let last = last.clone();
                        by_time.insert(time, last);
                        carried.push(SnapshotRef { id: id.clone(), time });
                    }
                }
                params.insert(TIME_PARAM.to_string(), Value::int(time as i64));
                self.events.push(SystemEvent {
                    src,
                    dest,
                    time,
                    params,
                });
                self.horizon = self.horizon.max(time);
                Ok(Applied::Event {
                    index: self.events.len() - 1,
                    carried,
                })
            }
        }
    }

    /// Undoes the most recent [`SystemGraph::apply`] of an event record.
    ///
    /// The horizon is left as is; it only bounds the times of later records.
    pub fn rollback(&mut self, applied: &Applied) {
        match applied {
            Applied::Event { index, carried } => {
                debug_assert_eq!(*index + 1, self.events.len());
                self.events.pop();
                for s in carried {
                    if let Some(by_time) = self.snapshots.get_mut(&s.id) {
                        by_time.remove(&s.time);
                    }
                }
            }
            Applied::Object { new_snapshot } => {
                if let Some(s) = new_snapshot {
                    let by_time = self.snapshots.get_mut(&s.id).expect("snapshot exists");
                    by_time.remove(&s.time);
                    if by_time.is_empty() {
                        self.snapshots.remove(&s.id);
                    }
                }
            }
        }
    }

    /// Serialises the graph as trace records that re-ingest to an equal
    /// graph: for each instance, every snapshot then every event.
    pub fn to_records(&self) -> Vec<TraceRecord> {
        let mut by_time: BTreeMap<u64, (Vec<TraceRecord>, Vec<TraceRecord>)> = BTreeMap::new();
        for (s, attrs) in self.snapshots() {
            by_time.entry(s.time).or_default().0.push(TraceRecord::Object {
                time: s.time,
                id: s.id,
                attrs: attrs.clone(),
            });
        }
        for e in &self.events {
            let mut params = e.params.clone();
            params.remove(TIME_PARAM);
            by_time.entry(e.time).or_default().1.push(TraceRecord::Event {
                time: e.time,
                src: e.src.clone(),
                dest: e.dest.clone(),
                params,
            });
        }
        by_time
            .into_values()
            .flat_map(|(objects, events)| objects.into_iter().chain(events))
            .collect()
    }
}
