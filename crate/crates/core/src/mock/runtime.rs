use std::collections::{HashMap, HashSet};

use super::memory::HostMemory;
use crate::codegen::{Backend, CompletedCommand};
use crate::sampler::{DeviceActivity, Engine};

/// Result codes returned by the mock API.
pub mod codes {
    pub const SUCCESS: i64 = 0;
    pub const NOT_READY: i64 = 1;
    pub const ERROR_UNINITIALIZED: i64 = 0x7800_0001;
    pub const ERROR_INVALID_ARGUMENT: i64 = 0x7800_0002;
    pub const ERROR_INVALID_HANDLE: i64 = 0x7800_0003;
    pub const ERROR_USE_AFTER_FREE: i64 = 0x7800_0004;
    pub const ERROR_APPEND_TO_CLOSED: i64 = 0x7800_0005;
    pub const ERROR_EXECUTE_UNCLOSED: i64 = 0x7800_0006;
    pub const ERROR_DOUBLE_EXECUTE: i64 = 0x7800_0007;
    pub const ERROR_INVALID_STATE: i64 = 0x7800_0008;
    pub const ERROR_OUT_OF_MEMORY: i64 = 0x7800_0009;
    /// Blocking wait on an event that nothing will ever signal.
    pub const ERROR_NOT_SIGNALED: i64 = 0x7800_000a;

    pub fn name(code: i64) -> &'static str {
        match code {
            SUCCESS => "SUCCESS",
            NOT_READY => "NOT_READY",
            ERROR_UNINITIALIZED => "ERROR_UNINITIALIZED",
            ERROR_INVALID_ARGUMENT => "ERROR_INVALID_ARGUMENT",
            ERROR_INVALID_HANDLE => "ERROR_INVALID_HANDLE",
            ERROR_USE_AFTER_FREE => "ERROR_USE_AFTER_FREE",
            ERROR_APPEND_TO_CLOSED => "ERROR_APPEND_TO_CLOSED",
            ERROR_EXECUTE_UNCLOSED => "ERROR_EXECUTE_UNCLOSED",
            ERROR_DOUBLE_EXECUTE => "ERROR_DOUBLE_EXECUTE",
            ERROR_INVALID_STATE => "ERROR_INVALID_STATE",
            ERROR_OUT_OF_MEMORY => "ERROR_OUT_OF_MEMORY",
            ERROR_NOT_SIGNALED => "ERROR_NOT_SIGNALED",
            _ => "UNKNOWN",
        }
    }
}

use codes::*;

/// Fixed virtual-time costs in nanoseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostTable {
    pub host_call_ns: u64,
    pub memcpy_fixed_ns: u64,
    pub memcpy_ns_per_byte: u64,
    pub kernel_ns_per_workgroup: u64,
    pub poll_ns: u64,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            host_call_ns: 500,
            memcpy_fixed_ns: 2000,
            memcpy_ns_per_byte: 1,
            kernel_ns_per_workgroup: 1000,
            poll_ns: 100,
        }
    }
}

impl CostTable {
    pub fn memcpy_ns(&self, size: u64) -> u64 {
        self.memcpy_fixed_ns + self.memcpy_ns_per_byte * size
    }

    pub fn kernel_ns(&self, groups: [u64; 3]) -> u64 {
        self.kernel_ns_per_workgroup * groups[0] * groups[1] * groups[2]
    }
}

pub const TILES: u64 = 2;
pub const HOST_HEAP_BASE: u64 = 0x0000_7fff_edce_ab98;
pub const HOST_HEAP_LIMIT: u64 = 0x0000_7fff_f000_0000;
pub const SCRATCH_BASE: u64 = 0x0000_7fff_f000_0000;
pub const DEVICE_HEAP_BASE: u64 = 0xff00_7fff_fff9_0000;
pub const HANDLE_BASE: u64 = 0x0000_0000_0508_a000;
const DEVICE_ALIGN: u64 = 0x1_0000;
/// Written into property blocks whose `pNext` was not NULL.
pub const POISON: u64 = 0xdead_beef_dead_beef;

/// Mock API function names, in header order.
pub mod functions {
    pub const INIT: &str = "zeMockInit";
    pub const DEVICE_GET_PROPERTIES: &str = "zeMockDeviceGetProperties";
    pub const MEM_ALLOC: &str = "zeMockMemAlloc";
    pub const MEM_FREE: &str = "zeMockMemFree";
    pub const COMMAND_LIST_CREATE: &str = "zeMockCommandListCreate";
    pub const APPEND_MEMORY_COPY: &str = "zeMockCommandListAppendMemoryCopy";
    pub const APPEND_LAUNCH_KERNEL: &str = "zeMockCommandListAppendLaunchKernel";
    pub const COMMAND_LIST_CLOSE: &str = "zeMockCommandListClose";
    pub const COMMAND_LIST_EXECUTE: &str = "zeMockCommandListExecute";
    pub const COMMAND_LIST_RESET: &str = "zeMockCommandListReset";
    pub const EVENT_CREATE: &str = "zeMockEventCreate";
    pub const EVENT_DESTROY: &str = "zeMockEventDestroy";
    pub const EVENT_HOST_SYNCHRONIZE: &str = "zeMockEventHostSynchronize";
}

use functions::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Host,
    Device,
}

impl Space {
    /// Space implied by the address convention (high byte `0xff` is device memory).
    pub fn of(addr: u64) -> Space {
        if addr >> 56 == 0xff {
            Space::Device
        } else {
            Space::Host
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub base: u64,
    pub size: u64,
    pub space: Space,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListState {
    Open,
    Closed,
    Executed,
}

#[derive(Debug, Clone)]
enum CommandKind {
    Memcpy { dst: u64, src: u64, size: u64 },
    Kernel { name: String, groups: [u64; 3] },
}

#[derive(Debug, Clone)]
struct Command {
    kind: CommandKind,
    signal: u64,
    wait: Vec<u64>,
    function: &'static str,
    args: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct CommandList {
    pub tile: u64,
    pub state: ListState,
    pub reset_count: u64,
    commands: Vec<Command>,
}

#[derive(Debug, Clone, Default)]
struct Event {
    signal_at: Option<u64>,
}

#[derive(Debug, Clone, Default)]
struct EngineState {
    free_at: u64,
    busy: Vec<(u64, u64)>,
}

/// Deterministic single-device runtime on a virtual clock.
#[derive(Debug, Clone)]
pub struct MockRuntime {
    clock: u64,
    costs: CostTable,
    initialized: bool,
    device: u64,
    memory: HostMemory,
    allocations: HashMap<u64, Allocation>,
    freed: HashSet<u64>,
    next_host: u64,
    next_device: u64,
    next_scratch: u64,
    next_handle: u64,
    lists: HashMap<u64, CommandList>,
    events: HashMap<u64, Event>,
    destroyed: HashSet<u64>,
    engines: HashMap<(u64, Engine), EngineState>,
    pending: Vec<CompletedCommand>,
    seq: u64,
}

impl Default for MockRuntime {
    fn default() -> Self {
        MockRuntime::new(CostTable::default())
    }
}

impl MockRuntime {
    pub fn new(costs: CostTable) -> Self {
        MockRuntime {
            clock: 0,
            costs,
            initialized: false,
            device: 0,
            memory: HostMemory::default(),
            allocations: HashMap::new(),
            freed: HashSet::new(),
            next_host: HOST_HEAP_BASE,
            next_device: DEVICE_HEAP_BASE,
            next_scratch: SCRATCH_BASE,
            next_handle: HANDLE_BASE,
            lists: HashMap::new(),
            events: HashMap::new(),
            destroyed: HashSet::new(),
            engines: HashMap::new(),
            pending: Vec::new(),
            seq: 0,
        }
    }

    pub fn costs(&self) -> &CostTable {
        &self.costs
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Advances the virtual clock by `ns` without an API call.
    pub fn advance(&mut self, ns: u64) {
        self.clock += ns;
    }

    /// Moves the clock forward to `t` (never backward).
    pub fn advance_to(&mut self, t: u64) {
        self.clock = self.clock.max(t);
    }

    pub fn memory(&self) -> &HostMemory {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut HostMemory {
        &mut self.memory
    }

    /// Reserves zeroed host memory for call arguments (out slots, structs, strings).
    pub fn alloc_scratch(&mut self, len: usize) -> u64 {
        let addr = self.next_scratch;
        let len = len.max(1) as u64;
        self.memory.map(addr, len as usize);
        self.next_scratch += len.div_ceil(16) * 16;
        addr
    }

    /// Scratch copy of a NUL-terminated string.
    pub fn scratch_cstring(&mut self, s: &str) -> u64 {
        let addr = self.alloc_scratch(s.len() + 1);
        self.memory.write(addr, s.as_bytes());
        addr
    }

    pub fn list(&self, handle: u64) -> Option<&CommandList> {
        self.lists.get(&handle)
    }

    pub fn live_allocations(&self) -> impl Iterator<Item = &Allocation> {
        self.allocations.values()
    }

    /// Busy intervals `[start, end)` of one engine, in start order.
    pub fn engine_intervals(&self, tile: u64, engine: Engine) -> &[(u64, u64)] {
        self.engines
            .get(&(tile, engine))
            .map(|e| e.busy.as_slice())
            .unwrap_or(&[])
    }

    /// Latest end time over all scheduled device commands.
    pub fn device_idle_at(&self) -> u64 {
        self.engines.values().map(|e| e.free_at).max().unwrap_or(0)
    }

    /// Commands scheduled but not yet handed out by `take_completed`.
    pub fn pending_commands(&self) -> usize {
        self.pending.len()
    }

    fn handle(&mut self) -> u64 {
        let h = self.next_handle;
        self.next_handle += 0x1000;
        h
    }

    fn out(&mut self, slot: u64, value: u64) -> i64 {
        if slot == 0 || !self.memory.write_u64(slot, value) {
            return ERROR_INVALID_ARGUMENT;
        }
        SUCCESS
    }

    fn check_pointer(&self, ptr: u64) -> i64 {
        let owner = self
            .allocations
            .values()
            .any(|a| a.base <= ptr && ptr < a.base + a.size.max(1));
        if owner {
            SUCCESS
        } else if self.freed.contains(&ptr) {
            ERROR_USE_AFTER_FREE
        } else {
            ERROR_INVALID_ARGUMENT
        }
    }

    fn list_mut(&mut self, h: u64) -> Result<&mut CommandList, i64> {
        self.lists.get_mut(&h).ok_or(ERROR_INVALID_HANDLE)
    }

    fn check_event(&self, h: u64) -> i64 {
        if self.events.contains_key(&h) {
            SUCCESS
        } else if self.destroyed.contains(&h) {
            ERROR_USE_AFTER_FREE
        } else {
            ERROR_INVALID_HANDLE
        }
    }

    fn init(&mut self, args: &[u64]) -> i64 {
        if self.device == 0 {
            self.device = self.handle();
        }
        self.initialized = true;
        self.out(args[1], self.device)
    }

    fn get_properties(&mut self, args: &[u64]) -> i64 {
        if args[0] != self.device {
            return ERROR_INVALID_HANDLE;
        }
        let p = args[1];
        let Some(pnext) = self.memory.read_u64(p) else {
            return ERROR_INVALID_ARGUMENT;
        };
        let mut block = [0u8; 32];
        block[..8].copy_from_slice(&pnext.to_le_bytes());
        if pnext == 0 {
            block[8..12].copy_from_slice(&0x0bd5u32.to_le_bytes());
            block[12..16].copy_from_slice(&(TILES as u32).to_le_bytes());
            block[16..24].copy_from_slice(&(64u64 << 30).to_le_bytes());
            block[24..28].copy_from_slice(&1600u32.to_le_bytes());
        } else {
            // Unknown extension chain: the block is filled with garbage, but the call succeeds.
            block[8..32].copy_from_slice(&[POISON.to_le_bytes(), POISON.to_le_bytes(), POISON.to_le_bytes()].concat());
        }
        if !self.memory.write(p, &block) {
            return ERROR_INVALID_ARGUMENT;
        }
        SUCCESS
    }

    fn mem_alloc(&mut self, args: &[u64]) -> i64 {
        let (space, size, slot) = (args[0], args[1], args[2]);
        let base = match space {
            0 => {
                let base = self.next_host;
                let end = base + size.max(1).div_ceil(8) * 8;
                if end > HOST_HEAP_LIMIT {
                    return ERROR_OUT_OF_MEMORY;
                }
                self.memory.map(base, size as usize);
                self.next_host = end;
                base
            }
            1 => {
                let base = self.next_device;
                self.next_device = base + size.max(1).div_ceil(DEVICE_ALIGN) * DEVICE_ALIGN;
                base
            }
            _ => return ERROR_INVALID_ARGUMENT,
        };
        let space = if space == 0 { Space::Host } else { Space::Device };
        self.allocations.insert(base, Allocation { base, size, space });
        self.out(slot, base)
    }

    fn mem_free(&mut self, args: &[u64]) -> i64 {
        let ptr = args[0];
        match self.allocations.remove(&ptr) {
            Some(a) => {
                if a.space == Space::Host {
                    self.memory.unmap(ptr);
                }
                self.freed.insert(ptr);
                SUCCESS
            }
            None if self.freed.contains(&ptr) => ERROR_USE_AFTER_FREE,
            None => ERROR_INVALID_ARGUMENT,
        }
    }

    fn list_create(&mut self, args: &[u64]) -> i64 {
        if args[0] != self.device {
            return ERROR_INVALID_HANDLE;
        }
        if args[1] >= TILES {
            return ERROR_INVALID_ARGUMENT;
        }
        let h = self.handle();
        let rc = self.out(args[2], h);
        if rc == SUCCESS {
            self.lists.insert(
                h,
                CommandList {
                    tile: args[1],
                    state: ListState::Open,
                    reset_count: 0,
                    commands: Vec::new(),
                },
            );
        }
        rc
    }

    fn append(&mut self, list: u64, cmd: Command) -> i64 {
        let l = match self.list_mut(list) {
            Ok(l) => l,
            Err(rc) => return rc,
        };
        if l.state != ListState::Open {
            return ERROR_APPEND_TO_CLOSED;
        }
        l.commands.push(cmd);
        SUCCESS
    }

    fn check_signal(&self, ev: u64) -> i64 {
        if ev == 0 {
            SUCCESS
        } else {
            self.check_event(ev)
        }
    }

    fn append_copy(&mut self, args: &[u64]) -> i64 {
        let (list, dst, src, size, signal, nwait, pwait) =
            (args[0], args[1], args[2], args[3], args[4], args[5], args[6]);
        if !self.lists.contains_key(&list) {
            return ERROR_INVALID_HANDLE;
        }
        for p in [dst, src] {
            let rc = self.check_pointer(p);
            if rc != SUCCESS {
                return rc;
            }
        }
        let rc = self.check_signal(signal);
        if rc != SUCCESS {
            return rc;
        }
        let mut wait = Vec::with_capacity(nwait as usize);
        for i in 0..nwait {
            match self.memory.read_u64(pwait + 8 * i) {
                Some(e) => wait.push(e),
                None => return ERROR_INVALID_ARGUMENT,
            }
        }
        self.append(
            list,
            Command {
                kind: CommandKind::Memcpy { dst, src, size },
                signal,
                wait,
                function: APPEND_MEMORY_COPY,
                args: args.to_vec(),
            },
        )
    }

    fn append_kernel(&mut self, args: &[u64]) -> i64 {
        let (list, pname, signal) = (args[0], args[1], args[5]);
        if !self.lists.contains_key(&list) {
            return ERROR_INVALID_HANDLE;
        }
        let Some(name) = self.memory.read_cstring(pname, 4096) else {
            return ERROR_INVALID_ARGUMENT;
        };
        let rc = self.check_signal(signal);
        if rc != SUCCESS {
            return rc;
        }
        self.append(
            list,
            Command {
                kind: CommandKind::Kernel {
                    name: String::from_utf8_lossy(&name).into_owned(),
                    groups: [args[2], args[3], args[4]],
                },
                signal,
                wait: Vec::new(),
                function: APPEND_LAUNCH_KERNEL,
                args: args.to_vec(),
            },
        )
    }

    fn close(&mut self, args: &[u64]) -> i64 {
        match self.list_mut(args[0]) {
            Ok(l) if l.state == ListState::Open => {
                l.state = ListState::Closed;
                SUCCESS
            }
            Ok(_) => ERROR_INVALID_STATE,
            Err(rc) => rc,
        }
    }

    fn execute(&mut self, args: &[u64]) -> i64 {
        let (tile, commands) = match self.list_mut(args[0]) {
            Ok(l) => match l.state {
                ListState::Open => return ERROR_EXECUTE_UNCLOSED,
                ListState::Executed => return ERROR_DOUBLE_EXECUTE,
                ListState::Closed => {
                    l.state = ListState::Executed;
                    (l.tile, l.commands.clone())
                }
            },
            Err(rc) => return rc,
        };
        // In-order list: each command starts after its predecessor, its engine
        // and every event it waits on.
        let mut ready = self.clock;
        for cmd in commands {
            let (engine, duration, kind, name) = match &cmd.kind {
                CommandKind::Memcpy { dst, src, size } => {
                    let dir = |a: u64| if Space::of(a) == Space::Device { 'd' } else { 'h' };
                    (
                        Engine::Copy,
                        self.costs.memcpy_ns(*size),
                        "memcpy",
                        format!("memcpy_{}2{}", dir(*src), dir(*dst)),
                    )
                }
                CommandKind::Kernel { name, groups } => {
                    (Engine::Compute, self.costs.kernel_ns(*groups), "kernel", name.clone())
                }
            };
            let waits = cmd
                .wait
                .iter()
                .filter_map(|e| self.events.get(e).and_then(|ev| ev.signal_at))
                .max()
                .unwrap_or(0);
            let eng = self.engines.entry((tile, engine)).or_default();
            let start = ready.max(eng.free_at).max(waits);
            let end = start + duration;
            eng.free_at = end;
            eng.busy.push((start, end));
            ready = end;
            if cmd.signal != 0 {
                if let Some(ev) = self.events.get_mut(&cmd.signal) {
                    ev.signal_at = Some(end);
                }
            }
            self.seq += 1;
            self.pending.push(CompletedCommand {
                function: cmd.function.to_string(),
                kind: kind.to_string(),
                name,
                start_ns: start,
                end_ns: end,
                device: 0,
                tile,
                engine: engine.as_str().to_string(),
                args: cmd.args,
            });
        }
        SUCCESS
    }

    fn reset(&mut self, args: &[u64]) -> i64 {
        match self.list_mut(args[0]) {
            Ok(l) => {
                l.state = ListState::Open;
                l.commands.clear();
                l.reset_count += 1;
                SUCCESS
            }
            Err(rc) => rc,
        }
    }

    fn event_create(&mut self, args: &[u64]) -> i64 {
        if args[0] != self.device {
            return ERROR_INVALID_HANDLE;
        }
        let h = self.handle();
        let rc = self.out(args[1], h);
        if rc == SUCCESS {
            self.events.insert(h, Event::default());
        }
        rc
    }

    fn event_destroy(&mut self, args: &[u64]) -> i64 {
        let rc = self.check_event(args[0]);
        if rc == SUCCESS {
            self.events.remove(&args[0]);
            self.destroyed.insert(args[0]);
        }
        rc
    }

    fn synchronize(&mut self, args: &[u64]) -> i64 {
        let (ev, timeout) = (args[0], args[1]);
        let rc = self.check_event(ev);
        if rc != SUCCESS {
            return rc;
        }
        let poll = self.costs.poll_ns;
        let signal_at = self.events[&ev].signal_at;
        if signal_at.is_some_and(|t| t <= self.clock) {
            return SUCCESS;
        }
        if timeout == 0 {
            self.clock += poll;
            return match signal_at {
                Some(t) if t <= self.clock => SUCCESS,
                Some(_) => NOT_READY,
                None => ERROR_NOT_SIGNALED,
            };
        }
        let Some(t) = signal_at else {
            if timeout == u64::MAX {
                return ERROR_NOT_SIGNALED;
            }
            self.clock += timeout.div_ceil(poll) * poll;
            return NOT_READY;
        };
        let needed = (t - self.clock).div_ceil(poll) * poll;
        if timeout == u64::MAX || needed <= timeout {
            self.clock += needed;
            SUCCESS
        } else {
            self.clock += timeout.div_ceil(poll) * poll;
            NOT_READY
        }
    }
}

impl Backend for MockRuntime {
    fn invoke(&mut self, function: &str, args: &[u64]) -> Option<i64> {
        let arity = match function {
            MEM_FREE | COMMAND_LIST_CLOSE | COMMAND_LIST_EXECUTE | COMMAND_LIST_RESET | EVENT_DESTROY => 1,
            INIT | DEVICE_GET_PROPERTIES | EVENT_CREATE | EVENT_HOST_SYNCHRONIZE => 2,
            MEM_ALLOC | COMMAND_LIST_CREATE => 3,
            APPEND_LAUNCH_KERNEL => 6,
            APPEND_MEMORY_COPY => 7,
            _ => return None,
        };
        self.clock += self.costs.host_call_ns;
        if args.len() != arity {
            return Some(ERROR_INVALID_ARGUMENT);
        }
        if function != INIT && !self.initialized {
            return Some(ERROR_UNINITIALIZED);
        }
        Some(match function {
            INIT => self.init(args),
            DEVICE_GET_PROPERTIES => self.get_properties(args),
            MEM_ALLOC => self.mem_alloc(args),
            MEM_FREE => self.mem_free(args),
            COMMAND_LIST_CREATE => self.list_create(args),
            APPEND_MEMORY_COPY => self.append_copy(args),
            APPEND_LAUNCH_KERNEL => self.append_kernel(args),
            COMMAND_LIST_CLOSE => self.close(args),
            COMMAND_LIST_EXECUTE => self.execute(args),
            COMMAND_LIST_RESET => self.reset(args),
            EVENT_CREATE => self.event_create(args),
            EVENT_DESTROY => self.event_destroy(args),
            EVENT_HOST_SYNCHRONIZE => self.synchronize(args),
            _ => unreachable!(),
        })
    }

    fn read_memory(&self, addr: u64, len: usize) -> Option<Vec<u8>> {
        self.memory.read(addr, len)
    }

    fn read_cstring(&self, addr: u64, max: usize) -> Option<Vec<u8>> {
        self.memory.read_cstring(addr, max)
    }

    fn now(&self) -> u64 {
        self.clock
    }

    fn take_completed(&mut self) -> Vec<CompletedCommand> {
        let now = self.clock;
        if !self.pending.iter().any(|c| c.end_ns <= now) {
            return Vec::new();
        }
        let (mut done, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|c| c.end_ns <= now);
        self.pending = rest;
        done.sort_by_key(|c| (c.end_ns, c.start_ns));
        done
    }
}

impl DeviceActivity for MockRuntime {
    fn engine_busy(&self, device: u64, tile: u64, engine: Engine, t: u64) -> bool {
        if device != 0 {
            return false;
        }
        let busy = self.engine_intervals(tile, engine);
        let i = busy.partition_point(|(s, _)| *s <= t);
        i > 0 && t < busy[i - 1].1
    }
}
