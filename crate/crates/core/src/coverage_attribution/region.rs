//! Shared 8-bit counter regions in the AFL convention.
//!
//! The region id travels to the target in an environment variable: a
//! decimal SysV shared-memory id, or a file path for file-backed mappings.

use std::ffi::c_void;
use std::fs::OpenOptions;
use std::io;
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};
use std::ptr::NonNull;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};

/// Environment variable AFL-instrumented targets read the map id from.
pub const AFL_SHM_ENV: &str = "__AFL_SHM_ID";

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    SysV,
    File,
}

#[derive(Debug)]
enum Backing {
    SysV { id: i32, owner: bool },
    File { path: PathBuf, owner: bool },
    Anonymous,
}

/// A mapped counter region. Readers and writers access it through atomics
/// so concurrent access from another process is well-defined.
#[derive(Debug)]
pub struct CounterRegion {
    ptr: NonNull<u8>,
    len: usize,
    backing: Backing,
}

// The mapping is plain shared memory accessed only through atomics.
unsafe impl Send for CounterRegion {}
unsafe impl Sync for CounterRegion {}

fn last_err<T>() -> io::Result<T> {
    Err(io::Error::last_os_error())
}

fn map_fd(fd: i32, len: usize) -> io::Result<NonNull<u8>> {
    // SAFETY: fresh shared mapping of a file of at least `len` bytes.
    let p = unsafe { libc::mmap(std::ptr::null_mut(), len, libc::PROT_READ | libc::PROT_WRITE, libc::MAP_SHARED, fd, 0) };
    if p == libc::MAP_FAILED {
        return last_err();
    }
    Ok(NonNull::new(p.cast()).expect("mmap returned non-null"))
}

impl CounterRegion {
    /// A new zeroed SysV segment owned (and removed on drop) by the caller.
    pub fn create_sysv(len: usize) -> io::Result<Self> {
        // SAFETY: plain syscalls; the result is checked.
        let id = unsafe { libc::shmget(libc::IPC_PRIVATE, len, libc::IPC_CREAT | libc::IPC_EXCL | 0o600) };
        if id < 0 {
            return last_err();
        }
        let region = Self::attach_sysv_inner(id, len, true)?;
        region.clear();
        Ok(region)
    }

    pub fn attach_sysv(id: i32, len: usize) -> io::Result<Self> {
        Self::attach_sysv_inner(id, len, false)
    }

    fn attach_sysv_inner(id: i32, len: usize, owner: bool) -> io::Result<Self> {
        // SAFETY: attach the segment; failure is (void*)-1.
        let p = unsafe { libc::shmat(id, std::ptr::null(), 0) };
        if p as isize == -1 {
            let err = io::Error::last_os_error();
            if owner {
                // SAFETY: removing the segment we just created.
                unsafe { libc::shmctl(id, libc::IPC_RMID, std::ptr::null_mut()) };
            }
            return Err(err);
        }
        // SAFETY: shmid_ds is plain data filled by the kernel.
        let mut ds: libc::shmid_ds = unsafe { std::mem::zeroed() };
        // SAFETY: valid id and output pointer.
        if unsafe { libc::shmctl(id, libc::IPC_STAT, &mut ds) } == 0 && ds.shm_segsz < len {
            // SAFETY: detaching the mapping made above.
            unsafe { libc::shmdt(p) };
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "segment smaller than requested map"));
        }
        Ok(CounterRegion { ptr: NonNull::new(p.cast()).expect("shmat non-null"), len, backing: Backing::SysV { id, owner } })
    }

    /// A new zeroed file-backed region, removed on drop.
    pub fn create_file(path: &Path, len: usize) -> io::Result<Self> {
        let f = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(path)?;
        f.set_len(len as u64)?;
        let ptr = map_fd(f.as_raw_fd(), len)?;
        Ok(CounterRegion { ptr, len, backing: Backing::File { path: path.to_path_buf(), owner: true } })
    }

    pub fn open_file(path: &Path) -> io::Result<Self> {
        let f = OpenOptions::new().read(true).write(true).open(path)?;
        let len = f.metadata()?.len() as usize;
        let ptr = map_fd(f.as_raw_fd(), len)?;
        Ok(CounterRegion { ptr, len, backing: Backing::File { path: path.to_path_buf(), owner: false } })
    }

    /// Process-private region for in-process use and tests.
    pub fn anonymous(len: usize) -> io::Result<Self> {
        // SAFETY: anonymous mapping; result checked.
        let p = unsafe {
            libc::mmap(
                std::ptr::null_mut(),
                len.max(1),
                libc::PROT_READ | libc::PROT_WRITE,
                libc::MAP_SHARED | libc::MAP_ANONYMOUS,
                -1,
                0,
            )
        };
        if p == libc::MAP_FAILED {
            return last_err();
        }
        Ok(CounterRegion { ptr: NonNull::new(p.cast()).expect("non-null"), len, backing: Backing::Anonymous })
    }

    pub fn create(transport: Transport, len: usize, dir: &Path) -> io::Result<Self> {
        match transport {
            Transport::SysV => Self::create_sysv(len),
            Transport::File => {
                static N: AtomicU64 = AtomicU64::new(0);
                let name = format!("counters-{}-{}.map", std::process::id(), N.fetch_add(1, Ordering::Relaxed));
                Self::create_file(&dir.join(name), len)
            }
        }
    }

    /// Attaches to the region announced in environment variable `var`,
    /// using at most `len` counters of it.
    pub fn from_env(var: &str, len: usize) -> io::Result<Self> {
        let v = std::env::var(var).map_err(|_| io::Error::new(io::ErrorKind::NotFound, format!("{var} not set")))?;
        match v.parse::<i32>() {
            Ok(id) => Self::attach_sysv(id, len.min(Self::sysv_size(id)?)),
            Err(_) => Self::open_file(Path::new(&v)),
        }
    }

    fn sysv_size(id: i32) -> io::Result<usize> {
        // SAFETY: shmid_ds is plain data filled by the kernel.
        let mut ds: libc::shmid_ds = unsafe { std::mem::zeroed() };
        // SAFETY: output pointer is valid.
        if unsafe { libc::shmctl(id, libc::IPC_STAT, &mut ds) } != 0 {
            return last_err();
        }
        Ok(ds.shm_segsz)
    }

    /// Value to export in the target's environment.
    pub fn env_value(&self) -> String {
        match &self.backing {
            Backing::SysV { id, .. } => id.to_string(),
            Backing::File { path, .. } => path.display().to_string(),
            Backing::Anonymous => String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn counters(&self) -> &[AtomicU8] {
        // SAFETY: the mapping is `len` bytes, lives as long as self, and
        // AtomicU8 has the layout of u8.
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr().cast::<AtomicU8>(), self.len) }
    }

    /// Word view covering ceil(len / 8) words. Mappings are page-aligned and
    /// page-granular, so the tail word stays inside the mapping.
    pub fn words(&self) -> &[AtomicU64] {
        // SAFETY: alignment and extent as above; AtomicU64 has u64 layout.
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr().cast::<AtomicU64>(), self.len.div_ceil(8)) }
    }

    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        self.counters()[i].load(Ordering::Relaxed)
    }

    #[inline]
    pub fn hit(&self, i: usize) {
        let c = &self.counters()[i];
        c.store(c.load(Ordering::Relaxed).wrapping_add(1), Ordering::Relaxed);
    }

    /// Copies the first `out.len()` counters.
    #[inline]
    pub fn read_into(&self, out: &mut [u8]) {
        for (o, c) in out.iter_mut().zip(self.counters()) {
            *o = c.load(Ordering::Relaxed);
        }
    }

    pub fn clear(&self) {
        for c in self.counters() {
            c.store(0, Ordering::Relaxed);
        }
    }
}

impl Drop for CounterRegion {
    fn drop(&mut self) {
        let p = self.ptr.as_ptr().cast::<c_void>();
        // SAFETY: unmapping/detaching our own mapping exactly once.
        unsafe {
            match &self.backing {
                Backing::SysV { id, owner } => {
                    libc::shmdt(p);
                    if *owner {
                        libc::shmctl(*id, libc::IPC_RMID, std::ptr::null_mut());
                    }
                }
                Backing::File { path, owner } => {
                    libc::munmap(p, self.len);
                    if *owner {
                        let _ = std::fs::remove_file(path);
                    }
                }
                Backing::Anonymous => {
                    libc::munmap(p, self.len.max(1));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sysv_attach_sees_writes() {
        let owner = CounterRegion::create_sysv(4096).unwrap();
        let id: i32 = owner.env_value().parse().unwrap();
        let other = CounterRegion::attach_sysv(id, 4096).unwrap();
        other.hit(7);
        other.hit(7);
        assert_eq!(owner.get(7), 2);
        assert!(CounterRegion::attach_sysv(id, 1 << 20).is_err());
    }

    #[test]
    fn file_region_shared_and_removed() {
        let dir = tempfile::tempdir().unwrap();
        let path = {
            let r = CounterRegion::create(Transport::File, 64, dir.path()).unwrap();
            let path = PathBuf::from(r.env_value());
            let other = CounterRegion::open_file(&path).unwrap();
            for _ in 0..300 {
                other.hit(1);
            }
            assert_eq!(r.get(1), 44);
            path
        };
        assert!(!path.exists());
    }
}
