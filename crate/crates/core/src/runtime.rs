//! Message-driven execution engine.
//!
//! Chares exchange entry-method messages. An entry method runs once all of
//! its inputs have arrived; its body is a hook supplied by the workload
//! ([`EntryHooks`]) and may emit further messages and device work
//! ([`WorkDraft`]). Submitted work requests are queued on the work group list,
//! one node per kernel class, where the aggregator decides when to combine
//! them. Completion of a combined batch fans out one callback message per
//! member back to the owning chare.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::aggregator::{AggregationPolicy, AggregatorError, AggregatorState, CombinedWorkRequest};

/// Simulated time in microseconds.
pub type Time = f64;

/// Entry method invoked on a chare when its device work completes.
pub const CALLBACK_ENTRY: &str = "work_done";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChareId(pub u32);

impl fmt::Display for ChareId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "chare#{}", self.0)
    }
}

/// Work request sequence number, strictly increasing in creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WorkId(pub u64);

impl fmt::Display for WorkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "wr#{}", self.0)
    }
}

/// Symbolic kernel identifier. Work requests are only combined with other
/// requests of the same class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KernelClass(Arc<str>);

impl KernelClass {
    pub fn new(name: &str) -> Self {
        KernelClass(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for KernelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for KernelClass {
    fn from(s: &str) -> Self {
        KernelClass::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Device {
    Cpu,
    Gpu,
}

impl Device {
    pub fn as_str(self) -> &'static str {
        match self {
            Device::Cpu => "cpu",
            Device::Gpu => "gpu",
        }
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub target: ChareId,
    pub entry: &'static str,
    pub payload_bytes: u64,
    /// Number of messages the target entry method waits for before running.
    pub inputs_required: u32,
    pub send_time: Time,
}

impl Message {
    pub fn new(target: ChareId, entry: &'static str, inputs_required: u32, send_time: Time) -> Self {
        Message { target, entry, payload_bytes: 0, inputs_required, send_time }
    }
}

/// One chare's unit of device work.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkRequest {
    pub id: WorkId,
    pub owner: ChareId,
    pub kernel: KernelClass,
    /// Application buffers read by the request, in access order.
    pub buffers: Vec<u32>,
    /// Workload measure: number of data items (interactions) processed.
    pub items: u64,
    pub arrival: Time,
    /// Size of each referenced buffer on the device.
    pub bytes_per_item: u64,
}

/// Device work emitted by an entry method, before the runtime has assigned
/// an id. It arrives on the work group list `delay` after the invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkDraft {
    pub kernel: KernelClass,
    pub buffers: Vec<u32>,
    pub items: u64,
    pub bytes_per_item: u64,
    pub delay: Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionEvent {
    pub combined_id: u64,
    pub members: Vec<WorkId>,
    pub device: Device,
    pub finish_time: Time,
}

/// Side effects of one entry-method execution.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Effects {
    pub work: Vec<WorkDraft>,
    pub messages: Vec<Message>,
}

/// Entry-method bodies, supplied by a workload.
pub trait EntryHooks {
    fn invoke(&mut self, chare: ChareId, entry: &'static str, now: Time) -> Effects;
}

/// Record of one entry-method execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub chare: ChareId,
    pub entry: &'static str,
    pub time: Time,
    pub inputs: u32,
    pub effects: Effects,
}

#[derive(Debug, Error, PartialEq)]
pub enum RuntimeError {
    #[error("work request {0} was already submitted")]
    DuplicateWorkRequest(WorkId),
    #[error("no route to {0}")]
    UnknownChare(ChareId),
    #[error("message to {0} requires zero inputs")]
    ZeroInputs(ChareId),
    #[error("completion names {0}, which is not in flight")]
    UnknownWorkRequest(WorkId),
    #[error("completion names {0}, which already completed")]
    AlreadyCompleted(WorkId),
    #[error("kernel class `{0}` has no registered maxSize")]
    UnknownKernel(String),
    #[error("completion event {0} has no members")]
    EmptyCompletion(u64),
    #[error(transparent)]
    Aggregator(#[from] AggregatorError),
}

/// Single-threaded message-driven runtime instance.
#[derive(Debug)]
pub struct Runtime {
    chare_count: u32,
    policy: AggregationPolicy,
    max_sizes: BTreeMap<KernelClass, usize>,
    /// The work group list: one aggregation node per kernel class.
    groups: BTreeMap<KernelClass, AggregatorState>,
    received: HashMap<(ChareId, &'static str), u32>,
    /// Callbacks a chare awaits for the work emitted by its latest invocation.
    awaiting: HashMap<ChareId, u32>,
    seen: HashSet<WorkId>,
    in_flight: HashMap<WorkId, ChareId>,
    completed: HashSet<WorkId>,
    next_work_id: u64,
    next_batch_id: u64,
    invocations: Vec<Invocation>,
}

impl Runtime {
    pub fn new(chare_count: u32, policy: AggregationPolicy) -> Self {
        Runtime {
            chare_count,
            policy,
            max_sizes: BTreeMap::new(),
            groups: BTreeMap::new(),
            received: HashMap::new(),
            awaiting: HashMap::new(),
            seen: HashSet::new(),
            in_flight: HashMap::new(),
            completed: HashSet::new(),
            next_work_id: 0,
            next_batch_id: 0,
            invocations: Vec::new(),
        }
    }

    pub fn chare_count(&self) -> u32 {
        self.chare_count
    }

    /// Sets the per-batch cap for a kernel class.
    pub fn register_kernel(&mut self, kernel: KernelClass, max_size: usize) {
        self.max_sizes.insert(kernel, max_size);
    }

    pub fn max_size(&self, kernel: &KernelClass) -> Option<usize> {
        self.max_sizes.get(kernel).copied()
    }

    /// Turns a draft into a work request owned by `owner`, assigning the next id.
    pub fn create_work_request(&mut self, owner: ChareId, draft: WorkDraft, now: Time) -> WorkRequest {
        let id = WorkId(self.next_work_id);
        self.next_work_id += 1;
        WorkRequest {
            id,
            owner,
            kernel: draft.kernel,
            buffers: draft.buffers,
            items: draft.items,
            arrival: now + draft.delay,
            bytes_per_item: draft.bytes_per_item,
        }
    }

    /// Appends `wr` to the work group node of its kernel class and notifies
    /// that node's aggregator of the arrival. The arrival time is set to `now`.
    pub fn submit_work_request(&mut self, mut wr: WorkRequest, now: Time) -> Result<(), RuntimeError> {
        if self.seen.contains(&wr.id) {
            return Err(RuntimeError::DuplicateWorkRequest(wr.id));
        }
        let max_size = self
            .max_sizes
            .get(&wr.kernel)
            .copied()
            .ok_or_else(|| RuntimeError::UnknownKernel(wr.kernel.to_string()))?;
        if !self.groups.contains_key(&wr.kernel) {
            let state = AggregatorState::new(wr.kernel.clone(), max_size, self.policy.clone())?;
            self.groups.insert(wr.kernel.clone(), state);
        }
        let group = self.groups.get_mut(&wr.kernel).expect("group inserted above");
        group.observe_arrival(now)?;
        wr.arrival = now;
        self.seen.insert(wr.id);
        self.in_flight.insert(wr.id, wr.owner);
        group.enqueue(wr);
        Ok(())
    }

    /// Counts `msg` towards its target entry method. Once the entry has
    /// received `inputs_required` messages it runs through `hooks` and the
    /// count resets.
    pub fn dispatch_ready(
        &mut self,
        msg: &Message,
        hooks: &mut dyn EntryHooks,
    ) -> Result<Option<Invocation>, RuntimeError> {
        if msg.target.0 >= self.chare_count {
            return Err(RuntimeError::UnknownChare(msg.target));
        }
        if msg.inputs_required == 0 {
            return Err(RuntimeError::ZeroInputs(msg.target));
        }
        let count = self.received.entry((msg.target, msg.entry)).or_insert(0);
        *count += 1;
        if *count < msg.inputs_required {
            return Ok(None);
        }
        let inputs = *count;
        *count = 0;
        let effects = hooks.invoke(msg.target, msg.entry, msg.send_time);
        if !effects.work.is_empty() {
            self.awaiting.insert(msg.target, effects.work.len() as u32);
        }
        let invocation = Invocation {
            chare: msg.target,
            entry: msg.entry,
            time: msg.send_time,
            inputs,
            effects,
        };
        self.invocations.push(invocation.clone());
        Ok(Some(invocation))
    }

    /// Marks every member complete and returns one callback message per
    /// member, addressed to its owner and stamped at the finish time.
    pub fn on_completion(&mut self, ev: &CompletionEvent) -> Result<Vec<Message>, RuntimeError> {
        if ev.members.is_empty() {
            return Err(RuntimeError::EmptyCompletion(ev.combined_id));
        }
        // validate before mutating so a bad event leaves no partial state
        let mut batch = HashSet::with_capacity(ev.members.len());
        for id in &ev.members {
            if self.completed.contains(id) || !batch.insert(*id) {
                return Err(RuntimeError::AlreadyCompleted(*id));
            }
            if !self.in_flight.contains_key(id) {
                return Err(RuntimeError::UnknownWorkRequest(*id));
            }
        }
        let mut out = Vec::with_capacity(ev.members.len());
        for id in &ev.members {
            let owner = self.in_flight.remove(id).expect("validated above");
            self.completed.insert(*id);
            let inputs = self.awaiting.get(&owner).copied().unwrap_or(1);
            out.push(Message::new(owner, CALLBACK_ENTRY, inputs, ev.finish_time));
        }
        Ok(out)
    }

    /// Polls every work group node and returns all batches that are due.
    pub fn poll_groups(&mut self, now: Time) -> Vec<CombinedWorkRequest> {
        let mut out = Vec::new();
        for group in self.groups.values_mut() {
            while let Some(batch) = group.poll_combine(now, &mut self.next_batch_id) {
                out.push(batch);
            }
        }
        out
    }

    /// Periodic tick: lets tick-driven policies flush, then polls.
    pub fn tick_groups(&mut self, now: Time) -> Vec<CombinedWorkRequest> {
        let mut out = Vec::new();
        for group in self.groups.values_mut() {
            if let Some(batch) = group.on_tick(now, &mut self.next_batch_id) {
                out.push(batch);
            }
            while let Some(batch) = group.poll_combine(now, &mut self.next_batch_id) {
                out.push(batch);
            }
        }
        out
    }

    /// Allocates a fresh batch id (used when a batch is split across devices).
    pub fn next_batch_id(&mut self) -> u64 {
        let id = self.next_batch_id;
        self.next_batch_id += 1;
        id
    }

    pub fn groups(&self) -> impl Iterator<Item = &AggregatorState> {
        self.groups.values()
    }

    pub fn group(&self, kernel: &KernelClass) -> Option<&AggregatorState> {
        self.groups.get(kernel)
    }

    pub fn group_keys(&self) -> Vec<KernelClass> {
        self.groups.keys().cloned().collect()
    }

    pub fn pending_in_groups(&self) -> usize {
        self.groups.values().map(|g| g.pending_len()).sum()
    }

    pub fn submitted_count(&self) -> usize {
        self.seen.len()
    }

    pub fn completed_count(&self) -> usize {
        self.completed.len()
    }

    pub fn in_flight_count(&self) -> usize {
        self.in_flight.len()
    }

    pub fn invocations(&self) -> &[Invocation] {
        &self.invocations
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Recorder {
        calls: Vec<(ChareId, &'static str)>,
        emit: usize,
    }

    impl EntryHooks for Recorder {
        fn invoke(&mut self, chare: ChareId, entry: &'static str, _now: Time) -> Effects {
            self.calls.push((chare, entry));
            let work = (0..self.emit)
                .map(|i| WorkDraft {
                    kernel: "force".into(),
                    buffers: vec![i as u32],
                    items: 1,
                    bytes_per_item: 8,
                    delay: 0.0,
                })
                .collect();
            Effects { work, messages: vec![] }
        }
    }

    fn runtime() -> Runtime {
        let mut rt = Runtime::new(4, AggregationPolicy::adaptive());
        rt.register_kernel("force".into(), 104);
        rt.register_kernel("ewald".into(), 65);
        rt
    }

    fn draft(kernel: &str) -> WorkDraft {
        WorkDraft { kernel: kernel.into(), buffers: vec![1], items: 1, bytes_per_item: 8, delay: 0.0 }
    }

    #[test]
    fn submissions_group_by_kernel_class() {
        let mut rt = runtime();
        let a = rt.create_work_request(ChareId(0), draft("force"), 0.0);
        rt.submit_work_request(a, 0.0).unwrap();
        assert_eq!(rt.group_keys(), vec![KernelClass::new("force")]);
        assert_eq!(rt.group(&"force".into()).unwrap().pending_len(), 1);

        let b = rt.create_work_request(ChareId(1), draft("force"), 5.0);
        rt.submit_work_request(b, 5.0).unwrap();
        let pending: Vec<_> = rt.group(&"force".into()).unwrap().pending().map(|w| w.id).collect();
        assert_eq!(pending, vec![WorkId(0), WorkId(1)]);

        let c = rt.create_work_request(ChareId(2), draft("ewald"), 6.0);
        rt.submit_work_request(c, 6.0).unwrap();
        let mut keys = rt.group_keys();
        keys.sort();
        assert_eq!(keys, vec![KernelClass::new("ewald"), KernelClass::new("force")]);
        assert!(rt.groups().all(|g| g.pending().all(|w| &w.kernel == g.kernel())));
    }

    #[test]
    fn duplicate_submission_rejected() {
        let mut rt = runtime();
        let a = rt.create_work_request(ChareId(0), draft("force"), 0.0);
        rt.submit_work_request(a.clone(), 0.0).unwrap();
        assert_eq!(rt.submit_work_request(a, 1.0), Err(RuntimeError::DuplicateWorkRequest(WorkId(0))));
    }

    #[test]
    fn unregistered_kernel_rejected() {
        let mut rt = runtime();
        let a = rt.create_work_request(ChareId(0), draft("pme"), 0.0);
        assert!(matches!(rt.submit_work_request(a, 0.0), Err(RuntimeError::UnknownKernel(_))));
    }

    #[test]
    fn entry_runs_only_after_all_inputs() {
        let mut rt = runtime();
        let mut hooks = Recorder { calls: vec![], emit: 0 };
        let msg = Message::new(ChareId(1), "interact", 2, 0.0);
        assert_eq!(rt.dispatch_ready(&msg, &mut hooks).unwrap(), None);
        let inv = rt.dispatch_ready(&msg, &mut hooks).unwrap().expect("second input completes");
        assert_eq!(inv.inputs, 2);
        assert_eq!(hooks.calls, vec![(ChareId(1), "interact")]);
        // counter reset
        assert_eq!(rt.dispatch_ready(&msg, &mut hooks).unwrap(), None);
    }

    #[test]
    fn single_input_entries_run_immediately() {
        let mut rt = runtime();
        let mut hooks = Recorder { calls: vec![], emit: 0 };
        let msg = Message::new(ChareId(0), "start", 1, 0.0);
        for _ in 0..3 {
            assert!(rt.dispatch_ready(&msg, &mut hooks).unwrap().is_some());
        }
        assert_eq!(hooks.calls.len(), 3);
    }

    #[test]
    fn unknown_chare_is_a_routing_error() {
        let mut rt = runtime();
        let mut hooks = Recorder { calls: vec![], emit: 0 };
        let msg = Message::new(ChareId(9), "start", 1, 0.0);
        assert_eq!(rt.dispatch_ready(&msg, &mut hooks), Err(RuntimeError::UnknownChare(ChareId(9))));
    }

    fn submit_three(rt: &mut Runtime, owners: [u32; 3]) -> Vec<WorkId> {
        owners
            .iter()
            .map(|&o| {
                let wr = rt.create_work_request(ChareId(o), draft("force"), 0.0);
                let id = wr.id;
                rt.submit_work_request(wr, 0.0).unwrap();
                id
            })
            .collect()
    }

    #[test]
    fn completion_fans_out_one_callback_per_member() {
        let mut rt = runtime();
        let ids = submit_three(&mut rt, [0, 1, 2]);
        let ev = CompletionEvent { combined_id: 0, members: ids, device: Device::Gpu, finish_time: 42.0 };
        let msgs = rt.on_completion(&ev).unwrap();
        assert_eq!(msgs.len(), 3);
        let targets: Vec<_> = msgs.iter().map(|m| m.target.0).collect();
        assert_eq!(targets, vec![0, 1, 2]);
        assert!(msgs.iter().all(|m| m.send_time == 42.0 && m.entry == CALLBACK_ENTRY));
    }

    #[test]
    fn shared_owner_gets_one_callback_per_request() {
        let mut rt = runtime();
        let ids = submit_three(&mut rt, [3, 3, 1]);
        let ev = CompletionEvent { combined_id: 0, members: ids[..2].to_vec(), device: Device::Cpu, finish_time: 1.0 };
        let msgs = rt.on_completion(&ev).unwrap();
        assert_eq!(msgs.iter().filter(|m| m.target == ChareId(3)).count(), 2);
    }

    #[test]
    fn replayed_completion_is_rejected() {
        let mut rt = runtime();
        let ids = submit_three(&mut rt, [0, 1, 2]);
        let ev = CompletionEvent { combined_id: 7, members: ids, device: Device::Gpu, finish_time: 1.0 };
        rt.on_completion(&ev).unwrap();
        assert_eq!(rt.on_completion(&ev), Err(RuntimeError::AlreadyCompleted(WorkId(0))));
        let ghost = CompletionEvent { combined_id: 8, members: vec![WorkId(99)], device: Device::Gpu, finish_time: 1.0 };
        assert_eq!(rt.on_completion(&ghost), Err(RuntimeError::UnknownWorkRequest(WorkId(99))));
    }

    #[test]
    fn callbacks_await_every_request_of_the_invocation() {
        let mut rt = runtime();
        let mut hooks = Recorder { calls: vec![], emit: 3 };
        let inv = rt.dispatch_ready(&Message::new(ChareId(2), "walk", 1, 0.0), &mut hooks).unwrap().unwrap();
        let ids: Vec<_> = inv
            .effects
            .work
            .into_iter()
            .map(|d| {
                let wr = rt.create_work_request(ChareId(2), d, 0.0);
                let id = wr.id;
                rt.submit_work_request(wr, 0.0).unwrap();
                id
            })
            .collect();
        let msgs = rt
            .on_completion(&CompletionEvent { combined_id: 0, members: ids, device: Device::Gpu, finish_time: 3.0 })
            .unwrap();
        assert!(msgs.iter().all(|m| m.inputs_required == 3));
        let mut fired = 0;
        for m in &msgs {
            if rt.dispatch_ready(m, &mut hooks).unwrap().is_some() {
                fired += 1;
            }
        }
        assert_eq!(fired, 1);
    }

    #[test]
    fn conservation_of_work_requests() {
        let mut rt = runtime();
        let ids = submit_three(&mut rt, [0, 1, 2]);
        assert_eq!(rt.submitted_count(), rt.completed_count() + rt.in_flight_count());
        rt.on_completion(&CompletionEvent { combined_id: 0, members: vec![ids[1]], device: Device::Gpu, finish_time: 1.0 })
            .unwrap();
        assert_eq!(rt.submitted_count(), 3);
        assert_eq!(rt.completed_count(), 1);
        assert_eq!(rt.in_flight_count(), 2);
    }
}
