use std::collections::{BTreeMap, VecDeque};

use super::{GuestMemory, HardeningConfig, MemError, RegionMap};

/// A freed chunk of `size` bytes satisfies `malloc(n)` when
/// `size - REUSE_TOLERANCE <= n <= size`.
pub const REUSE_TOLERANCE: u32 = 16;

/// With quarantine on, a freed chunk sits out this many allocations.
pub const QUARANTINE_ALLOCATIONS: u32 = 8;

const ALIGN: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub addr: u32,
    pub size: u32,
}

/// Heap metadata kept host-side, next to (not inside) guest memory.
///
/// Bump allocation plus a most-recently-freed-first free list. Reuse is
/// size-tolerant and freed bytes are left in place, which is what makes
/// dangling pointers exploitable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocatorState {
    heap_base: u32,
    heap_limit: u32,
    next_bump: u32,
    free_list: VecDeque<Chunk>,
    live: BTreeMap<u32, u32>,
    quarantine: VecDeque<(Chunk, u32)>,
    config: HardeningConfig,
}

impl AllocatorState {
    pub fn new(regions: &RegionMap, config: HardeningConfig) -> Self {
        Self {
            heap_base: regions.heap_base,
            heap_limit: regions.heap_limit,
            next_bump: regions.heap_base,
            free_list: VecDeque::new(),
            live: BTreeMap::new(),
            quarantine: VecDeque::new(),
            config,
        }
    }

    pub fn config(&self) -> HardeningConfig {
        self.config
    }

    pub fn next_bump(&self) -> u32 {
        self.next_bump
    }

    pub fn free_list(&self) -> impl Iterator<Item = &Chunk> {
        self.free_list.iter()
    }

    pub fn is_live(&self, addr: u32) -> bool {
        self.live.contains_key(&addr)
    }

    /// Size of the live chunk at `addr`.
    pub fn chunk_size(&self, addr: u32) -> Option<u32> {
        self.live.get(&addr).copied()
    }

    pub fn live_chunks(&self) -> impl Iterator<Item = Chunk> + '_ {
        self.live.iter().map(|(&addr, &size)| Chunk { addr, size })
    }

    /// Returns a chunk for `n` bytes. Contents are whatever was there before.
    pub fn malloc<M: GuestMemory + ?Sized>(&mut self, mem: &mut M, n: u32) -> Result<u32, MemError> {
        if n == 0 {
            return Err(MemError::ZeroAlloc);
        }
        let reuse = self
            .free_list
            .iter()
            .position(|c| c.size.saturating_sub(REUSE_TOLERANCE) <= n && n <= c.size);
        let addr = match reuse {
            Some(i) => {
                let chunk = self.free_list.remove(i).expect("index from position");
                self.live.insert(chunk.addr, chunk.size);
                chunk.addr
            }
            None => {
                let addr = self.next_bump.div_ceil(ALIGN) * ALIGN;
                let end = addr as u64 + n as u64;
                if end > self.heap_limit.min(mem.size()) as u64 {
                    return Err(MemError::HeapFull { requested: n });
                }
                self.next_bump = end as u32;
                self.live.insert(addr, n);
                addr
            }
        };
        self.tick_quarantine();
        Ok(addr)
    }

    pub fn free<M: GuestMemory + ?Sized>(&mut self, mem: &mut M, addr: u32) -> Result<(), MemError> {
        let size = self.live.remove(&addr).ok_or(MemError::DoubleFree { addr })?;
        let chunk = Chunk { addr, size };
        if self.config.quarantine_and_zero {
            mem.fill(addr, size, 0)?;
            self.quarantine.push_back((chunk, QUARANTINE_ALLOCATIONS));
        } else {
            self.free_list.push_front(chunk);
        }
        Ok(())
    }

    fn tick_quarantine(&mut self) {
        for entry in self.quarantine.iter_mut() {
            entry.1 -= 1;
        }
        while let Some(&(chunk, 0)) = self.quarantine.front() {
            self.quarantine.pop_front();
            self.free_list.push_front(chunk);
        }
    }

    /// Little-endian metadata blob used as the trailer of a host snapshot.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut put = |v: u32| out.extend_from_slice(&v.to_le_bytes());
        put(self.heap_base);
        put(self.heap_limit);
        put(self.next_bump);
        put(self.config.bits());
        put(self.free_list.len() as u32);
        for c in &self.free_list {
            put(c.addr);
            put(c.size);
        }
        put(self.live.len() as u32);
        for (&a, &s) in &self.live {
            put(a);
            put(s);
        }
        put(self.quarantine.len() as u32);
        for (c, left) in &self.quarantine {
            put(c.addr);
            put(c.size);
            put(*left);
        }
        out
    }

    pub fn decode(raw: &[u8]) -> Result<Self, MemError> {
        let mut words = raw.chunks_exact(4).map(|w| u32::from_le_bytes(w.try_into().unwrap()));
        if raw.len() % 4 != 0 {
            return Err(MemError::BadDump("allocator trailer is not word aligned".into()));
        }
        let mut next = || words.next().ok_or_else(|| MemError::BadDump("allocator trailer truncated".into()));
        let heap_base = next()?;
        let heap_limit = next()?;
        let next_bump = next()?;
        let config = HardeningConfig::from_bits(next()?);
        let mut free_list = VecDeque::new();
        for _ in 0..next()? {
            free_list.push_back(Chunk { addr: next()?, size: next()? });
        }
        let mut live = BTreeMap::new();
        for _ in 0..next()? {
            live.insert(next()?, next()?);
        }
        let mut quarantine = VecDeque::new();
        for _ in 0..next()? {
            quarantine.push_back((Chunk { addr: next()?, size: next()? }, next()?));
        }
        if next().is_ok() {
            return Err(MemError::BadDump("trailing bytes after allocator state".into()));
        }
        Ok(Self {
            heap_base,
            heap_limit,
            next_bump,
            free_list,
            live,
            quarantine,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmem::LinearMemory;
    use proptest::prelude::*;

    fn setup(quarantine: bool) -> (AllocatorState, LinearMemory) {
        let cfg = HardeningConfig {
            quarantine_and_zero: quarantine,
            ..HardeningConfig::none()
        };
        (AllocatorState::new(&RegionMap::DEFAULT, cfg), LinearMemory::default())
    }

    #[test]
    fn freed_chunk_is_reused_within_tolerance() {
        let (mut heap, mut mem) = setup(false);
        let a = heap.malloc(&mut mem, 32).unwrap();
        heap.free(&mut mem, a).unwrap();
        assert_eq!(heap.malloc(&mut mem, 30).unwrap(), a);
        assert_eq!(heap.chunk_size(a), Some(32));
    }

    #[test]
    fn larger_request_gets_fresh_memory() {
        let (mut heap, mut mem) = setup(false);
        let a = heap.malloc(&mut mem, 32).unwrap();
        heap.free(&mut mem, a).unwrap();
        let b = heap.malloc(&mut mem, 64).unwrap();
        assert_ne!(a, b);
        assert!(b >= a + 32);
    }

    #[test]
    fn too_small_request_gets_fresh_memory() {
        let (mut heap, mut mem) = setup(false);
        let a = heap.malloc(&mut mem, 64).unwrap();
        heap.free(&mut mem, a).unwrap();
        assert_ne!(heap.malloc(&mut mem, 21).unwrap(), a);
        assert_eq!(heap.malloc(&mut mem, 48).unwrap(), a);
    }

    #[test]
    fn stale_bytes_survive_free_and_reuse() {
        let (mut heap, mut mem) = setup(false);
        let a = heap.malloc(&mut mem, 32).unwrap();
        mem.write(a, b"old secret").unwrap();
        heap.free(&mut mem, a).unwrap();
        assert_eq!(mem.read(a, 10).unwrap(), b"old secret");
        let b = heap.malloc(&mut mem, 20).unwrap();
        assert_eq!(b, a);
        assert_eq!(mem.read(b, 10).unwrap(), b"old secret");
    }

    #[test]
    fn most_recent_free_wins() {
        let (mut heap, mut mem) = setup(false);
        let a = heap.malloc(&mut mem, 32).unwrap();
        let b = heap.malloc(&mut mem, 32).unwrap();
        heap.free(&mut mem, a).unwrap();
        heap.free(&mut mem, b).unwrap();
        assert_eq!(heap.malloc(&mut mem, 32).unwrap(), b);
        assert_eq!(heap.malloc(&mut mem, 32).unwrap(), a);
    }

    #[test]
    fn double_free_is_reported() {
        let (mut heap, mut mem) = setup(false);
        let a = heap.malloc(&mut mem, 16).unwrap();
        heap.free(&mut mem, a).unwrap();
        assert_eq!(heap.free(&mut mem, a), Err(MemError::DoubleFree { addr: a }));
        assert!(heap.free(&mut mem, 0x1234).is_err());
    }

    #[test]
    fn quarantine_zeroes_and_delays_reuse() {
        let (mut heap, mut mem) = setup(true);
        let a = heap.malloc(&mut mem, 32).unwrap();
        mem.write(a, b"nonce-material").unwrap();
        heap.free(&mut mem, a).unwrap();
        assert_eq!(mem.read(a, 32).unwrap(), &[0; 32]);
        for _ in 0..QUARANTINE_ALLOCATIONS {
            assert_ne!(heap.malloc(&mut mem, 30).unwrap(), a);
        }
        assert_eq!(heap.malloc(&mut mem, 30).unwrap(), a);
    }

    #[test]
    fn zero_and_oversized_requests_fail() {
        let (mut heap, mut mem) = setup(false);
        assert_eq!(heap.malloc(&mut mem, 0), Err(MemError::ZeroAlloc));
        assert!(matches!(heap.malloc(&mut mem, 0x20000), Err(MemError::HeapFull { .. })));
        // The failed request must not have moved the bump pointer.
        assert_eq!(heap.malloc(&mut mem, 8).unwrap(), RegionMap::DEFAULT.heap_base);
    }

    #[test]
    fn metadata_round_trips() {
        let (mut heap, mut mem) = setup(true);
        let a = heap.malloc(&mut mem, 40).unwrap();
        let _b = heap.malloc(&mut mem, 24).unwrap();
        heap.free(&mut mem, a).unwrap();
        let back = AllocatorState::decode(&heap.encode()).unwrap();
        assert_eq!(back, heap);
        assert!(AllocatorState::decode(&heap.encode()[..10]).is_err());
    }

    /// Independent list model of the allocator contract.
    #[derive(Default)]
    struct Model {
        bump: u32,
        free: Vec<(u32, u32)>,
        live: Vec<(u32, u32)>,
    }

    impl Model {
        fn malloc(&mut self, n: u32) -> u32 {
            for i in 0..self.free.len() {
                let (addr, size) = self.free[i];
                if n <= size && n + 16 >= size {
                    self.free.remove(i);
                    self.live.push((addr, size));
                    return addr;
                }
            }
            let addr = self.bump.div_ceil(8) * 8;
            self.bump = addr + n;
            self.live.push((addr, n));
            addr
        }

        fn free(&mut self, idx: usize) -> Option<u32> {
            if self.live.is_empty() {
                return None;
            }
            let (addr, size) = self.live.remove(idx % self.live.len());
            self.free.insert(0, (addr, size));
            Some(addr)
        }
    }

    #[derive(Debug, Clone)]
    enum Op {
        Malloc(u32),
        Free(usize),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![(1u32..200).prop_map(Op::Malloc), any::<usize>().prop_map(Op::Free)]
    }

    proptest! {
        #[test]
        fn matches_reference_list_model(ops in prop::collection::vec(op(), 1..80)) {
            let (mut heap, mut mem) = setup(false);
            let mut model = Model { bump: RegionMap::DEFAULT.heap_base, ..Model::default() };
            for op in ops {
                match op {
                    Op::Malloc(n) => prop_assert_eq!(heap.malloc(&mut mem, n).unwrap(), model.malloc(n)),
                    Op::Free(i) => {
                        if let Some(addr) = model.free(i) {
                            heap.free(&mut mem, addr).unwrap();
                        }
                    }
                }
            }
            // No two live chunks overlap and all are inside the heap.
            let mut live: Vec<Chunk> = heap.live_chunks().collect();
            live.sort_by_key(|c| c.addr);
            for w in live.windows(2) {
                prop_assert!(w[0].addr + w[0].size <= w[1].addr);
            }
            for c in &live {
                prop_assert!(c.addr >= RegionMap::DEFAULT.heap_base && c.addr + c.size <= mem.size());
            }
        }

        #[test]
        fn identical_sequences_identical_addresses(sizes in prop::collection::vec(1u32..128, 1..40)) {
            let run = || {
                let (mut heap, mut mem) = setup(false);
                let mut out = Vec::new();
                for (i, &n) in sizes.iter().enumerate() {
                    let a = heap.malloc(&mut mem, n).unwrap();
                    out.push(a);
                    if i % 3 == 0 {
                        heap.free(&mut mem, a).unwrap();
                    }
                }
                out
            };
            prop_assert_eq!(run(), run());
        }

        #[test]
        fn reuse_iff_within_tolerance(s in 1u32..256, n in 1u32..300) {
            let (mut heap, mut mem) = setup(false);
            let a = heap.malloc(&mut mem, s).unwrap();
            heap.free(&mut mem, a).unwrap();
            let b = heap.malloc(&mut mem, n).unwrap();
            prop_assert_eq!(b == a, s.saturating_sub(16) <= n && n <= s);

            let (mut heap, mut mem) = setup(true);
            let a = heap.malloc(&mut mem, s).unwrap();
            heap.free(&mut mem, a).unwrap();
            prop_assert_ne!(heap.malloc(&mut mem, n).unwrap(), a);
        }
    }
}
