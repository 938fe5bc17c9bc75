use std::fs;

use ordinal_state::pipeline::{load_dataset, Dataset};
use ordinal_state::synthgen::{gen_cohort, read_latents, write_dataset, CohortConfig, Progression};
use ordinal_state::Error;

fn small() -> CohortConfig {
    CohortConfig {
        n_patients: 4,
        visits_per_patient: 3,
        scans_per_volume: 3,
        other_rate: 0.2,
        seed: 5,
        ..CohortConfig::default()
    }
}

#[test]
fn written_dataset_loads_back() {
    let cohort = gen_cohort(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&cohort, dir.path()).unwrap();
    let loaded = load_dataset(&manifest).unwrap();
    let direct = Dataset::from_cohort(&cohort).unwrap();
    assert_eq!(loaded.pairs(), direct.pairs());
    for i in 0..loaded.len() {
        assert_eq!(loaded.pair_images(i), direct.pair_images(i));
    }
    let hist = loaded.label_histogram();
    assert_eq!(hist.iter().sum::<usize>(), loaded.len());
    assert!(hist[Progression::Other.index()] > 0);

    let mut ids: Vec<usize> = loaded.pairs().iter().map(|p| p.pair_id).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..loaded.len()).collect::<Vec<_>>());

    let latents = read_latents(dir.path()).unwrap();
    assert_eq!(latents, cohort.severities());
}

#[test]
fn dangling_image_path_is_reported() {
    let cohort = gen_cohort(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&cohort, dir.path()).unwrap();
    let victim = &cohort.pairs[3].img2;
    fs::remove_file(dir.path().join(victim)).unwrap();
    match load_dataset(&manifest) {
        Err(e) => assert!(e.to_string().contains(victim.as_str()), "{e}"),
        Ok(_) => panic!("missing image accepted"),
    }
}

#[test]
fn malformed_manifest_line_names_the_record() {
    let cohort = gen_cohort(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&cohort, dir.path()).unwrap();
    let mut text = fs::read_to_string(&manifest).unwrap();
    text.push_str("{\"pair_id\": 999}\n");
    fs::write(&manifest, text).unwrap();
    match load_dataset(&manifest) {
        Err(Error::Record { index, .. }) => assert_eq!(index, cohort.pairs.len()),
        other => panic!("unexpected {other:?}"),
    }
}
