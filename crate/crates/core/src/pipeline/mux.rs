use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use super::{Message, PipelineError, TracedEvent};
use crate::trace::{EventRecord, StreamCursor, StreamId, TraceError};

/// One input of the muxer: a stream identity and its records in file order.
pub struct Source {
    pub id: StreamId,
    pub records: Box<dyn Iterator<Item = Result<EventRecord, TraceError>>>,
}

impl Source {
    pub fn new(id: StreamId, records: impl Iterator<Item = Result<EventRecord, TraceError>> + 'static) -> Self {
        Source {
            id,
            records: Box::new(records),
        }
    }

    /// In-memory source, mostly for tests and synthetic traces.
    pub fn from_records(id: StreamId, records: Vec<EventRecord>) -> Self {
        Source::new(id, records.into_iter().map(Ok))
    }
}

impl From<StreamCursor> for Source {
    fn from(c: StreamCursor) -> Self {
        Source::new(c.id().clone(), c)
    }
}

type Key = (u64, Arc<StreamId>, usize);

/// k-way merge by `(timestamp, hostname, pid, tid, input index)`.
///
/// Each input keeps only its head in the heap, so equal keys from one input
/// leave in arrival order. Ends with a single [`Message::EndOfStream`].
pub struct Mux {
    inputs: Vec<(Arc<StreamId>, Box<dyn Iterator<Item = Result<EventRecord, TraceError>>>)>,
    heads: Vec<Option<EventRecord>>,
    last: Vec<(u64, u64)>,
    heap: BinaryHeap<Reverse<Key>>,
    started: bool,
    done: bool,
}

pub fn mux_streams(sources: Vec<Source>) -> Mux {
    let n = sources.len();
    Mux {
        inputs: sources.into_iter().map(|s| (Arc::new(s.id), s.records)).collect(),
        heads: vec![None; n],
        last: vec![(0, 0); n],
        heap: BinaryHeap::with_capacity(n),
        started: false,
        done: false,
    }
}

impl Mux {
    fn pull(&mut self, i: usize) -> Result<(), PipelineError> {
        let (id, it) = &mut self.inputs[i];
        match it.next() {
            None => Ok(()),
            Some(Err(e)) => Err(e.into()),
            Some(Ok(rec)) => {
                let (prev, index) = self.last[i];
                if rec.timestamp_ns < prev {
                    return Err(PipelineError::Ordering {
                        stream: id.to_string(),
                        index,
                        previous_ns: prev,
                        timestamp_ns: rec.timestamp_ns,
                    });
                }
                self.last[i] = (rec.timestamp_ns, index + 1);
                self.heap.push(Reverse((rec.timestamp_ns, id.clone(), i)));
                self.heads[i] = Some(rec);
                Ok(())
            }
        }
    }

    fn advance(&mut self) -> Result<Option<Message>, PipelineError> {
        if !self.started {
            self.started = true;
            for i in 0..self.inputs.len() {
                self.pull(i)?;
            }
        }
        let Some(Reverse((_, stream, i))) = self.heap.pop() else {
            self.done = true;
            return Ok(Some(Message::EndOfStream));
        };
        let record = self.heads[i].take().expect("heap entry has a head");
        self.pull(i)?;
        Ok(Some(Message::Event(TracedEvent { stream, record })))
    }
}

impl Iterator for Mux {
    type Item = Result<Message, PipelineError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.advance() {
            Ok(m) => m.map(Ok),
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}
