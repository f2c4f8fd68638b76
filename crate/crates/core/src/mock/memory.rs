use std::collections::BTreeMap;

/// Host-visible memory of the simulated process, as disjoint byte regions.
#[derive(Debug, Default, Clone)]
pub struct HostMemory {
    regions: BTreeMap<u64, Vec<u8>>,
}

impl HostMemory {
    pub fn map(&mut self, base: u64, len: usize) {
        self.regions.insert(base, vec![0; len]);
    }

    pub fn unmap(&mut self, base: u64) -> bool {
        self.regions.remove(&base).is_some()
    }

    fn locate(&self, addr: u64, len: usize) -> Option<(u64, usize)> {
        let (base, bytes) = self.regions.range(..=addr).next_back()?;
        let off = (addr - base) as usize;
        (off + len <= bytes.len()).then_some((*base, off))
    }

    pub fn read(&self, addr: u64, len: usize) -> Option<Vec<u8>> {
        let (base, off) = self.locate(addr, len)?;
        Some(self.regions[&base][off..off + len].to_vec())
    }

    pub fn write(&mut self, addr: u64, bytes: &[u8]) -> bool {
        match self.locate(addr, bytes.len()) {
            Some((base, off)) => {
                self.regions.get_mut(&base).unwrap()[off..off + bytes.len()].copy_from_slice(bytes);
                true
            }
            None => false,
        }
    }

    pub fn read_u64(&self, addr: u64) -> Option<u64> {
        self.read(addr, 8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn write_u64(&mut self, addr: u64, v: u64) -> bool {
        self.write(addr, &v.to_le_bytes())
    }

    /// Bytes up to (not including) the first NUL, at most `max`.
    pub fn read_cstring(&self, addr: u64, max: usize) -> Option<Vec<u8>> {
        let (base, off) = self.locate(addr, 1)?;
        let bytes = &self.regions[&base][off..];
        let end = bytes
            .iter()
            .take(max)
            .position(|b| *b == 0)
            .unwrap_or(bytes.len().min(max));
        Some(bytes[..end].to_vec())
    }
}
