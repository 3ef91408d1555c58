//! In-process reference guests. Each export is written as the sequence of
//! libc calls and fixed-address loads/stores a guest module would perform,
//! so the WebAssembly guests can mirror it one-for-one.

use crate::linmem::{GuestMemory, HardeningConfig, LinearMemory, LocalDecl, MemError, StackFrame};

use super::layout::*;
use super::libc::Libc;
use super::{Backend, BackendKind, HostError, Scenario, Snapshot, Vector};

const SQLI_FRAME: [LocalDecl; 2] = [
    LocalDecl::buffer("token", SQLI_TOKEN_LEN),
    LocalDecl::value("query", SQLI_QUERY_LEN),
];
const SSTI_FRAME: [LocalDecl; 2] = [
    LocalDecl::buffer("name", SSTI_NAME_LEN),
    LocalDecl::value("nonce", SSTI_NONCE_LEN),
];

/// Export names and parameter counts per scenario.
pub fn export_table(scenario: Scenario) -> &'static [(&'static str, usize)] {
    match scenario {
        Scenario::Sqli => &[
            ("init", 1),
            ("sqli_get_query_addr", 0),
            ("sqli_set_token", 2),
            ("sqli_free_query", 0),
            ("fmt_echo", 3),
        ],
        Scenario::Ssti => &[
            ("init", 1),
            ("ssti_make_nonce", 0),
            ("ssti_set_name", 2),
            ("ssti_free_nonce", 0),
            ("ssti_get_nonce_addr", 0),
            ("fmt_echo", 3),
        ],
        Scenario::Xsleak => &[
            ("init", 1),
            ("xsleak_store_secret", 3),
            ("xsleak_get_pattern_addr", 0),
            ("xsleak_set_pattern", 2),
            ("xsleak_free_pattern", 0),
        ],
    }
}

/// Initial data segments of a guest build.
pub fn data_segments(scenario: Scenario) -> Vec<(u32, Vec<u8>)> {
    let mut segs = vec![(PRNG_STATE, PRNG_SEED.to_le_bytes().to_vec())];
    match scenario {
        Scenario::Sqli => segs.push((SQLI_TEMPLATE_ADDR, cstr(SQLI_DEFAULT_TEMPLATE))),
        Scenario::Ssti => {}
        Scenario::Xsleak => segs.push((XSLEAK_DEFAULT_PATTERN_ADDR, cstr(XSLEAK_DEFAULT_PATTERN))),
    }
    segs
}

fn cstr(s: &str) -> Vec<u8> {
    let mut v = s.as_bytes().to_vec();
    v.push(0);
    v
}

pub struct SimBackend {
    scenario: Scenario,
    mem: LinearMemory,
    libc: Libc,
}

impl SimBackend {
    pub fn new(scenario: Scenario, hardening: HardeningConfig) -> Self {
        let mut mem = LinearMemory::default();
        for (addr, bytes) in data_segments(scenario) {
            mem.write(addr, &bytes).expect("data segment inside memory");
        }
        Self {
            scenario,
            mem,
            libc: Libc::new(hardening),
        }
    }

    pub fn from_snapshot(scenario: Scenario, snapshot: Snapshot) -> Self {
        let hardening = snapshot.allocator.config();
        Self {
            scenario,
            mem: snapshot.memory,
            libc: Libc {
                alloc: snapshot.allocator,
                hardening,
                output: Vec::new(),
            },
        }
    }
}

impl Backend for SimBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Sim
    }

    fn scenario(&self) -> Scenario {
        self.scenario
    }

    fn hardening(&self) -> HardeningConfig {
        self.libc.hardening
    }

    fn exports(&self) -> Vec<String> {
        export_table(self.scenario).iter().map(|(n, _)| n.to_string()).collect()
    }

    fn call_export(&mut self, name: &str, args: &[u32]) -> Result<u32, HostError> {
        let &(_, arity) = export_table(self.scenario)
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| HostError::NoExport(name.to_string()))?;
        if args.len() != arity {
            return Err(HostError::Arity {
                name: name.to_string(),
                expected: arity,
                got: args.len(),
            });
        }
        // A trap aborts the request: nothing it wrote survives.
        let saved_mem = self.mem.clone();
        let saved_libc = self.libc.clone();
        let mut g = Guest {
            mem: self.mem.bytes_mut(),
            libc: &mut self.libc,
        };
        let result = match self.scenario {
            Scenario::Sqli => g.sqli(name, args),
            Scenario::Ssti => g.ssti(name, args),
            Scenario::Xsleak => g.xsleak(name, args),
        };
        if result.is_err() {
            self.mem = saved_mem;
            self.libc = saved_libc;
        }
        result
    }

    fn memory(&self) -> &[u8] {
        self.mem.bytes()
    }

    fn write_memory(&mut self, addr: u32, data: &[u8]) -> Result<(), MemError> {
        self.mem.write(addr, data)
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            memory: self.mem.clone(),
            allocator: self.libc.alloc.clone(),
        }
    }

    fn take_output(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.libc.output)
    }
}

struct Guest<'a> {
    mem: &'a mut [u8],
    libc: &'a mut Libc,
}

fn unreachable(msg: &str) -> HostError {
    HostError::Unreachable(msg.to_string())
}

impl Guest<'_> {
    fn load(&self, addr: u32) -> Result<u32, HostError> {
        Ok(self.mem.read_u32(addr)?)
    }

    fn store(&mut self, addr: u32, v: u32) -> Result<(), HostError> {
        Ok(self.mem.write_u32(addr, v)?)
    }

    fn variant(&self) -> Result<Vector, HostError> {
        Vector::from_code(self.load(VARIANT_SLOT)?).ok_or_else(|| unreachable("guest not initialised"))
    }

    fn canaries(&self) -> bool {
        self.libc.hardening.canaries
    }

    fn frame(&self, decls: &[LocalDecl]) -> Result<StackFrame, HostError> {
        Ok(StackFrame::push(&REGIONS, REGIONS.stack_top, decls, self.canaries())?)
    }

    fn enter_frame(&mut self, decls: &[LocalDecl]) -> Result<StackFrame, HostError> {
        let frame = self.frame(decls)?;
        self.store(FRAME_BASE_SLOT, frame.base)?;
        if let Some(guard) = frame.canary_addr() {
            self.libc.canary_place(self.mem, frame.base, guard)?;
        }
        Ok(frame)
    }

    fn check_frame(&mut self, frame: &StackFrame) -> Result<(), HostError> {
        if let Some(guard) = frame.canary_addr() {
            self.libc.canary_check(self.mem, frame.base, guard)?;
        }
        Ok(())
    }

    /// Heap copy of request bytes plus a terminating NUL.
    fn heap_dup(&mut self, src: u32, len: u32) -> Result<u32, HostError> {
        let p = self.libc.malloc(self.mem, len.wrapping_add(1))?;
        self.libc.memcpy_unchecked(self.mem, p, src, len, len)?;
        self.libc.fill(self.mem, p.wrapping_add(len), 1, 0)?;
        self.store(USER_PTR, p)?;
        Ok(p)
    }

    fn init_variant(&mut self, code: u32, allowed: &[Vector]) -> Result<Vector, HostError> {
        let v = Vector::from_code(code)
            .filter(|v| allowed.contains(v))
            .ok_or_else(|| unreachable("unsupported variant"))?;
        self.store(VARIANT_SLOT, code)?;
        Ok(v)
    }

    fn fmt_echo(&mut self, args: &[u32]) -> Result<u32, HostError> {
        Ok(self.libc.printf(self.mem, args[0], &args[1..3])?)
    }

    fn sqli(&mut self, name: &str, args: &[u32]) -> Result<u32, HostError> {
        let tlen = SQLI_DEFAULT_TEMPLATE.len() as u32 + 1;
        match name {
            "init" => {
                let v = self.init_variant(args[0], &[Vector::Bof, Vector::Ufs, Vector::Uaf, Vector::Iof])?;
                let frame = self.enter_frame(&SQLI_FRAME)?;
                let query = frame.addr_of("query").unwrap();
                match v {
                    Vector::Bof | Vector::Iof => {
                        self.libc.memcpy_checked(self.mem, query, SQLI_TEMPLATE_ADDR, tlen, SQLI_QUERY_LEN)?;
                    }
                    Vector::Ufs => {}
                    Vector::Uaf => {
                        let p = self.libc.malloc(self.mem, SQLI_QUERY_LEN)?;
                        self.libc.memcpy_checked(self.mem, p, SQLI_TEMPLATE_ADDR, tlen, SQLI_QUERY_LEN)?;
                        self.store(OBJ_PTR, p)?;
                    }
                }
                self.sqli("sqli_get_query_addr", &[])
            }
            "sqli_get_query_addr" => match self.variant()? {
                Vector::Bof | Vector::Iof => Ok(self.frame(&SQLI_FRAME)?.addr_of("query").unwrap()),
                Vector::Ufs => Ok(SQLI_TEMPLATE_ADDR),
                Vector::Uaf => self.load(OBJ_PTR),
            },
            "sqli_set_token" => {
                let (src, len) = (args[0], args[1]);
                let frame = self.frame(&SQLI_FRAME)?;
                let token = frame.addr_of("token").unwrap();
                match self.variant()? {
                    Vector::Bof | Vector::Iof => {
                        self.libc.memcpy_buffer(self.mem, token, src, len, SQLI_TOKEN_LEN)?;
                        self.check_frame(&frame)?;
                        Ok(token)
                    }
                    Vector::Ufs => {
                        self.libc.memcpy_checked(self.mem, token, src, len, SQLI_TOKEN_LEN)?;
                        Ok(token)
                    }
                    Vector::Uaf => self.heap_dup(src, len),
                }
            }
            "sqli_free_query" => {
                if self.variant()? == Vector::Uaf {
                    // The pointer is left dangling.
                    let p = self.load(OBJ_PTR)?;
                    self.libc.free(self.mem, p)?;
                }
                Ok(0)
            }
            "fmt_echo" => self.fmt_echo(args),
            other => Err(HostError::NoExport(other.to_string())),
        }
    }

    fn ssti(&mut self, name: &str, args: &[u32]) -> Result<u32, HostError> {
        match name {
            "init" => {
                self.init_variant(args[0], &[Vector::Bof, Vector::Ufs, Vector::Uaf])?;
                self.enter_frame(&SSTI_FRAME)?;
                Ok(0)
            }
            "ssti_make_nonce" => match self.variant()? {
                Vector::Uaf => {
                    if self.load(OBJ_PTR)? == 0 {
                        let p = self.libc.malloc(self.mem, SSTI_NONCE_LEN)?;
                        self.libc.nonce_fill(self.mem, p, PRNG_STATE)?;
                        self.store(OBJ_PTR, p)?;
                    }
                    self.load(OBJ_PTR)
                }
                Vector::Ufs => {
                    // Generated once, then kept for the life of the instance.
                    if self.load(NONCE_FLAG)? == 0 {
                        self.libc.nonce_fill(self.mem, SSTI_STATIC_NONCE, PRNG_STATE)?;
                        self.store(NONCE_FLAG, 1)?;
                    }
                    Ok(SSTI_STATIC_NONCE)
                }
                _ => {
                    let nonce = self.frame(&SSTI_FRAME)?.addr_of("nonce").unwrap();
                    self.libc.nonce_fill(self.mem, nonce, PRNG_STATE)?;
                    Ok(nonce)
                }
            },
            "ssti_set_name" => {
                let (src, len) = (args[0], args[1]);
                let frame = self.frame(&SSTI_FRAME)?;
                let buf = frame.addr_of("name").unwrap();
                match self.variant()? {
                    Vector::Uaf => self.heap_dup(src, len),
                    Vector::Ufs => {
                        self.libc.memcpy_checked(self.mem, buf, src, len, SSTI_NAME_LEN)?;
                        Ok(buf)
                    }
                    _ => {
                        self.libc.memcpy_buffer(self.mem, buf, src, len, SSTI_NAME_LEN)?;
                        self.check_frame(&frame)?;
                        Ok(buf)
                    }
                }
            }
            "ssti_free_nonce" => {
                if self.variant()? == Vector::Uaf {
                    let p = self.load(OBJ_PTR)?;
                    self.libc.free(self.mem, p)?;
                }
                Ok(0)
            }
            "ssti_get_nonce_addr" => match self.variant()? {
                Vector::Uaf => self.load(OBJ_PTR),
                Vector::Ufs => Ok(SSTI_STATIC_NONCE),
                _ => Ok(self.frame(&SSTI_FRAME)?.addr_of("nonce").unwrap()),
            },
            "fmt_echo" => self.fmt_echo(args),
            other => Err(HostError::NoExport(other.to_string())),
        }
    }

    fn pattern_addr(&self) -> Result<u32, HostError> {
        match self.variant()? {
            Vector::Uaf => self.load(OBJ_PTR),
            _ => Ok(xsleak_pattern_addr(self.canaries())),
        }
    }

    fn xsleak(&mut self, name: &str, args: &[u32]) -> Result<u32, HostError> {
        let dlen = XSLEAK_DEFAULT_PATTERN.len() as u32 + 1;
        match name {
            "init" => {
                let v = self.init_variant(args[0], &[Vector::Bof, Vector::Uaf])?;
                if self.canaries() {
                    self.libc.canary_place(self.mem, XSLEAK_SECRETS, XSLEAK_PATTERN)?;
                }
                let dst = if v == Vector::Uaf {
                    let p = self.libc.malloc(self.mem, XSLEAK_PATTERN_LEN)?;
                    self.store(OBJ_PTR, p)?;
                    p
                } else {
                    xsleak_pattern_addr(self.canaries())
                };
                self.libc
                    .memcpy_checked(self.mem, dst, XSLEAK_DEFAULT_PATTERN_ADDR, dlen, XSLEAK_PATTERN_LEN)?;
                Ok(dst)
            }
            "xsleak_store_secret" => {
                let (slot, src, len) = (args[0], args[1], args[2]);
                if slot >= XSLEAK_SLOTS {
                    return Err(unreachable("secret slot out of range"));
                }
                let dst = xsleak_slot_addr(slot);
                match self.variant()? {
                    Vector::Uaf => {
                        // Staged through a heap buffer that is never freed.
                        let p = self.heap_dup(src, len)?;
                        self.libc.fill(self.mem, dst, XSLEAK_SLOT_LEN, 0)?;
                        self.libc.memcpy_checked(self.mem, dst, p, len, XSLEAK_SLOT_LEN)?;
                    }
                    _ => {
                        self.libc.fill(self.mem, dst, XSLEAK_SLOT_LEN, 0)?;
                        self.libc.memcpy_buffer(self.mem, dst, src, len, XSLEAK_SLOT_LEN)?;
                        self.libc.canary_check(self.mem, XSLEAK_SECRETS, XSLEAK_PATTERN)?;
                    }
                }
                Ok(dst)
            }
            "xsleak_get_pattern_addr" => self.pattern_addr(),
            "xsleak_set_pattern" => {
                let dst = self.pattern_addr()?;
                self.libc.fill(self.mem, dst, XSLEAK_PATTERN_LEN, 0)?;
                self.libc
                    .memcpy_checked(self.mem, dst, args[0], args[1], XSLEAK_PATTERN_LEN - 1)?;
                Ok(dst)
            }
            "xsleak_free_pattern" => {
                if self.variant()? == Vector::Uaf {
                    let p = self.load(OBJ_PTR)?;
                    self.libc.free(self.mem, p)?;
                }
                Ok(0)
            }
            other => Err(HostError::NoExport(other.to_string())),
        }
    }
}
