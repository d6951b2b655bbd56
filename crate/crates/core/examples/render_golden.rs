//! Regenerates the golden prompt fixtures under tests/fixtures/prompts.
//! Review the diff before committing the output.

use std::path::Path;

use ecpec_core::corpus::{load_dataset, DatasetFormat};
use ecpec_core::taxonomy::{build_auxiliary_samples, AuxiliaryOptions};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/prompts");
    let convs = load_dataset(dir.join("conversation.json"), DatasetFormat::Native).unwrap();
    for (name, video) in [("samples.json", false), ("samples_video.json", true)] {
        let opts = AuxiliaryOptions { include_video: video, ..Default::default() };
        let samples = build_auxiliary_samples(&convs[0], &opts).unwrap();
        std::fs::write(dir.join(name), serde_json::to_string_pretty(&samples).unwrap() + "\n").unwrap();
    }
}
