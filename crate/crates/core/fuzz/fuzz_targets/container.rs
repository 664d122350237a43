#![no_main]

use libfuzzer_sys::fuzz_target;
use monoview::field::Checkpoint;
use monoview::prior::{EmbeddingTable, ToyDenoiser};

// One input drives every container-backed format; the magic picks the reader
// that gets past the header.
fuzz_target!(|data: &[u8]| {
    let _ = Checkpoint::from_bytes(data);
    let _ = ToyDenoiser::from_bytes(data);
    let _ = EmbeddingTable::from_bytes(data);
});
