//! Output directory handling. Every file is written to a temporary file in
//! the target directory and renamed into place once complete.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(OutDir { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> io::Result<()> {
        let mut f = self.stream(name)?;
        f.write_all(bytes)?;
        f.commit()
    }

    pub fn stream(&self, name: &str) -> io::Result<AtomicFile> {
        let tmp = NamedTempFile::new_in(&self.dir)?;
        Ok(AtomicFile {
            inner: BufWriter::new(tmp),
            target: self.path(name),
        })
    }
}

pub struct AtomicFile {
    inner: BufWriter<NamedTempFile>,
    target: PathBuf,
}

impl AtomicFile {
    pub fn commit(self) -> io::Result<()> {
        let tmp = self.inner.into_inner().map_err(|e| e.into_error())?;
        tmp.as_file().sync_all()?;
        tmp.persist(&self.target).map_err(|e| e.error)?;
        Ok(())
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.inner.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}
