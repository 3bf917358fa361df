//! Packing of directory outputs into single items (plain tar, sorted entries,
//! zeroed timestamps and ownership so equal trees give equal bytes).

use std::fs;
use std::io;
use std::path::Path;

pub fn pack_dir(dir: &Path) -> io::Result<Vec<u8>> {
    let mut builder = tar::Builder::new(Vec::new());
    builder.mode(tar::HeaderMode::Deterministic);
    append_sorted(&mut builder, dir, Path::new(""))?;
    builder.into_inner()
}

fn append_sorted(builder: &mut tar::Builder<Vec<u8>>, dir: &Path, prefix: &Path) -> io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        let name = prefix.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            append_sorted(builder, &path, &name)?;
        } else {
            let data = fs::read(&path)?;
            let mut header = tar::Header::new_gnu();
            header.set_size(data.len() as u64);
            header.set_mode(0o644);
            header.set_mtime(0);
            header.set_entry_type(tar::EntryType::Regular);
            builder.append_data(&mut header, &name, data.as_slice())?;
        }
    }
    Ok(())
}

pub fn unpack_into(bytes: &[u8], dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    tar::Archive::new(bytes).unpack(dir)
}
