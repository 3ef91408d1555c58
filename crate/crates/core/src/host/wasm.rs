use std::path::{Path, PathBuf};

use wasmi::{Caller, Engine, Extern, Func, Instance, Linker, Memory, Module, Store, Val};

use crate::linmem::{HardeningConfig, LinearMemory, MemError};

use super::libc::Libc;
use super::{Backend, BackendKind, HostError, Scenario, Snapshot};

/// Import module name for the host libc.
pub const IMPORT_MODULE: &str = "lab";
/// Overrides the directory guest modules are loaded from.
pub const GUEST_DIR_ENV: &str = "LAB_GUEST_DIR";
const DEFAULT_GUEST_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/guests");

impl wasmi::errors::HostError for HostError {}

/// Guest modules instantiated in `wasmi`, with the libc provided as imports.
pub struct WasmBackend {
    scenario: Scenario,
    store: Store<Libc>,
    instance: Instance,
    memory: Memory,
}

impl std::fmt::Debug for WasmBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WasmBackend").field("scenario", &self.scenario).finish_non_exhaustive()
    }
}

fn inst_err(e: impl std::fmt::Display) -> HostError {
    HostError::Instantiate(e.to_string())
}

fn trap(e: MemError) -> wasmi::Error {
    wasmi::Error::host(HostError::Trap(e))
}

/// Runs `f` against the caller's exported memory and the libc state.
fn with_mem<R>(
    caller: &mut Caller<'_, Libc>,
    f: impl FnOnce(&mut Libc, &mut [u8]) -> Result<R, MemError>,
) -> Result<R, wasmi::Error> {
    let memory = caller
        .get_export("memory")
        .and_then(Extern::into_memory)
        .ok_or_else(|| wasmi::Error::host(inst_err("guest exports no memory")))?;
    let (data, libc) = memory.data_and_store_mut(caller);
    f(libc, data).map_err(trap)
}

fn link(linker: &mut Linker<Libc>) -> Result<(), wasmi::errors::LinkerError> {
    let m = IMPORT_MODULE;
    linker.func_wrap(m, "memcpy_unchecked", |mut c: Caller<'_, Libc>, dst: u32, src: u32, len: u32, cap: u32| {
        with_mem(&mut c, |l, mem| l.memcpy_unchecked(mem, dst, src, len, cap))
    })?;
    linker.func_wrap(m, "memcpy_checked", |mut c: Caller<'_, Libc>, dst: u32, src: u32, len: u32, cap: u32| {
        with_mem(&mut c, |l, mem| l.memcpy_checked(mem, dst, src, len, cap))
    })?;
    linker.func_wrap(m, "memcpy_buffer", |mut c: Caller<'_, Libc>, dst: u32, src: u32, len: u32, cap: u32| {
        with_mem(&mut c, |l, mem| l.memcpy_buffer(mem, dst, src, len, cap))
    })?;
    linker.func_wrap(m, "malloc", |mut c: Caller<'_, Libc>, n: u32| with_mem(&mut c, |l, mem| l.malloc(mem, n)))?;
    linker.func_wrap(m, "free", |mut c: Caller<'_, Libc>, p: u32| with_mem(&mut c, |l, mem| l.free(mem, p)))?;
    linker.func_wrap(m, "fill", |mut c: Caller<'_, Libc>, addr: u32, len: u32, byte: u32| {
        with_mem(&mut c, |l, mem| l.fill(mem, addr, len, byte as u8))
    })?;
    linker.func_wrap(m, "printf", |mut c: Caller<'_, Libc>, fmt: u32, a0: u32, a1: u32| {
        with_mem(&mut c, |l, mem| l.printf(mem, fmt, &[a0, a1]))
    })?;
    linker.func_wrap(m, "canary_place", |mut c: Caller<'_, Libc>, base: u32, addr: u32| {
        with_mem(&mut c, |l, mem| l.canary_place(mem, base, addr))
    })?;
    linker.func_wrap(m, "canary_check", |mut c: Caller<'_, Libc>, base: u32, addr: u32| {
        with_mem(&mut c, |l, mem| l.canary_check(mem, base, addr))
    })?;
    linker.func_wrap(m, "nonce_fill", |mut c: Caller<'_, Libc>, dst: u32, state: u32| {
        with_mem(&mut c, |l, mem| l.nonce_fill(mem, dst, state))
    })?;
    linker.func_wrap(m, "hardening", |c: Caller<'_, Libc>| c.data().hardening.bits())?;
    Ok(())
}

/// Maps a runtime error to the shared error type.
fn classify(e: wasmi::Error) -> HostError {
    if let Some(h) = e.downcast_ref::<HostError>() {
        return h.clone();
    }
    HostError::Unreachable(e.as_trap_code().map_or_else(|| e.to_string(), |c| c.to_string()))
}

impl WasmBackend {
    /// Instantiates a guest from WebAssembly text or binary.
    pub fn new(module: &[u8], scenario: Scenario, hardening: HardeningConfig) -> Result<Self, HostError> {
        let engine = Engine::default();
        let module = Module::new(&engine, module).map_err(inst_err)?;
        let mut store = Store::new(&engine, Libc::new(hardening));
        let mut linker = Linker::new(&engine);
        link(&mut linker).map_err(inst_err)?;
        let instance = linker.instantiate_and_start(&mut store, &module).map_err(inst_err)?;
        let memory = instance
            .get_memory(&store, "memory")
            .ok_or_else(|| inst_err("guest exports no memory"))?;
        LinearMemory::from_bytes(memory.data(&store).to_vec()).map_err(inst_err)?;
        Ok(Self {
            scenario,
            store,
            instance,
            memory,
        })
    }

    /// Directory searched for `{scenario}.wasm` then `{scenario}.wat`.
    pub fn guest_dir() -> PathBuf {
        std::env::var_os(GUEST_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_GUEST_DIR), PathBuf::from)
    }

    pub fn guest_path(dir: &Path, scenario: Scenario) -> Option<PathBuf> {
        ["wasm", "wat"]
            .iter()
            .map(|ext| dir.join(format!("{scenario}.{ext}")))
            .find(|p| p.is_file())
    }

    pub fn from_guest_dir(scenario: Scenario, hardening: HardeningConfig) -> Result<Self, HostError> {
        let dir = Self::guest_dir();
        let path = Self::guest_path(&dir, scenario)
            .ok_or_else(|| inst_err(format!("no guest module for {scenario} in {}", dir.display())))?;
        let bytes = std::fs::read(&path).map_err(|e| inst_err(format!("{}: {e}", path.display())))?;
        Self::new(&bytes, scenario, hardening)
    }

    fn func(&self, name: &str) -> Result<Func, HostError> {
        self.instance
            .get_func(&self.store, name)
            .ok_or_else(|| HostError::NoExport(name.to_string()))
    }
}

impl Backend for WasmBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Wasm
    }

    fn scenario(&self) -> Scenario {
        self.scenario
    }

    fn hardening(&self) -> HardeningConfig {
        self.store.data().hardening
    }

    fn exports(&self) -> Vec<String> {
        self.instance
            .exports(&self.store)
            .filter(|e| e.clone().into_func().is_some())
            .map(|e| e.name().to_string())
            .collect()
    }

    fn call_export(&mut self, name: &str, args: &[u32]) -> Result<u32, HostError> {
        let func = self.func(name)?;
        let ty = func.ty(&self.store);
        if ty.params().len() != args.len() {
            return Err(HostError::Arity {
                name: name.to_string(),
                expected: ty.params().len(),
                got: args.len(),
            });
        }
        let params: Vec<Val> = args.iter().map(|&a| Val::I32(a as i32)).collect();
        let mut results = vec![Val::I32(0); ty.results().len()];
        let saved_mem = self.memory.data(&self.store).to_vec();
        let saved_libc = self.store.data().clone();
        match func.call(&mut self.store, &params, &mut results) {
            Ok(()) => Ok(match results.first() {
                Some(Val::I32(v)) => *v as u32,
                _ => 0,
            }),
            Err(e) => {
                let data = self.memory.data_mut(&mut self.store);
                if data.len() == saved_mem.len() {
                    data.copy_from_slice(&saved_mem);
                }
                *self.store.data_mut() = saved_libc;
                Err(classify(e))
            }
        }
    }

    fn memory(&self) -> &[u8] {
        self.memory.data(&self.store)
    }

    fn write_memory(&mut self, addr: u32, data: &[u8]) -> Result<(), MemError> {
        use crate::linmem::GuestMemory;
        self.memory.data_mut(&mut self.store).write(addr, data)
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            memory: LinearMemory::from_bytes(self.memory.data(&self.store).to_vec()).expect("page-sized guest memory"),
            allocator: self.store.data().alloc.clone(),
        }
    }

    fn take_output(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.store.data_mut().output)
    }
}
