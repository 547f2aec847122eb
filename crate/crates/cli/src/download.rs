//! Fetches the MNIST release files into the data directory.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crsn::data::MNIST_FILES;
use crsn::error::{Error, Result};

/// Downloads every missing file as `<url><name>.gz`, checks it against the
/// pinned length and digest, and stores it uncompressed.
pub fn fetch_missing(dir: &Path, base_url: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for file in &MNIST_FILES {
        let target = dir.join(file.name);
        if target.is_file() || dir.join(format!("{}.gz", file.name)).is_file() {
            continue;
        }
        let url = format!("{}/{}.gz", base_url.trim_end_matches('/'), file.name);
        let response = ureq::get(&url)
            .call()
            .map_err(|e| Error::DataMissing(format!("download {url}: {e}")))?;
        let mut compressed = Vec::new();
        response
            .into_body()
            .into_reader()
            .read_to_end(&mut compressed)
            .map_err(|e| Error::DataMissing(format!("download {url}: {e}")))?;
        let mut raw = Vec::new();
        GzDecoder::new(compressed.as_slice())
            .read_to_end(&mut raw)
            .map_err(|e| Error::DataMissing(format!("{url}: not gzip: {e}")))?;
        file.verify(&raw)?;
        let partial = dir.join(format!("{}.part", file.name));
        std::fs::write(&partial, &raw)?;
        std::fs::rename(&partial, &target)?;
    }
    Ok(())
}
