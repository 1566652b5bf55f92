#![no_main]
use libfuzzer_sys::fuzz_target;
use tenso::io::{parse_scene, scene_to_string};

fuzz_target!(|text: &str| {
    if let Ok(scene) = parse_scene(text) {
        let printed = scene_to_string(&scene);
        let again = parse_scene(&printed).expect("printed scene must parse");
        assert_eq!(scene_to_string(&again), printed);
    }
});
