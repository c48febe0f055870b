#![no_main]

use latassist::latent::LatentModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = LatentModel::from_json(text) {
        assert_eq!(LatentModel::from_json(&model.to_json()).unwrap(), model);
    }
});
