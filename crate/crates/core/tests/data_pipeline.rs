use std::path::Path;

use overseg::data::{generate_synthetic, load_dataset, DatasetManifest, GenParams, Split};
use overseg::io::{load_tensor, save_tensor};
use overseg::Tensor;

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["images", "masks"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        for p in names {
            out.push((
                format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()),
                std::fs::read(&p).unwrap(),
            ));
        }
    }
    out.push(("manifest.tsv".into(), std::fs::read(dir.join("manifest.tsv")).unwrap()));
    out
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let p = GenParams {
        n: 6,
        seed: 99,
        small_max: 3,
        ..GenParams::default()
    };
    generate_synthetic(&p, a.path()).unwrap();
    generate_synthetic(&p, b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 13);
    assert_eq!(fa, fb);

    let c = tempfile::tempdir().unwrap();
    generate_synthetic(&GenParams { seed: 100, ..p }, c.path()).unwrap();
    assert_ne!(files(c.path())[0], fa[0]);
}

#[test]
fn ten_samples_split_eight_two() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(
        &GenParams {
            seed: 4,
            ..GenParams::default()
        },
        dir.path(),
    )
    .unwrap();
    assert_eq!(m.entries.len(), 10);
    let on_disk = DatasetManifest::load(dir.path().join("manifest.tsv")).unwrap();
    assert_eq!(on_disk.entries, m.entries);
    assert_eq!(on_disk.param("seed"), Some("4"));
    let data = load_dataset(dir.path().join("manifest.tsv"), 8).unwrap();
    assert_eq!(data.split(Split::Train).count(), 8);
    assert_eq!(data.split(Split::Test).count(), 2);
    let ids: Vec<_> = data.split(Split::Test).map(|r| r.meta.id.clone()).collect();
    assert_eq!(ids, ["s0008", "s0009"]);
    for r in data.split(Split::Train) {
        assert_eq!(r.image.shape(), &[1, 64, 64]);
        assert_eq!(r.mask.shape(), &[1, 64, 64]);
    }
}

#[test]
fn missing_file_names_the_entry() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(
        &GenParams {
            n: 3,
            n_test: 1,
            seed: 1,
            ..GenParams::default()
        },
        dir.path(),
    )
    .unwrap();
    std::fs::remove_file(dir.path().join("masks/s0001.kiut")).unwrap();
    let err = load_dataset(dir.path().join("manifest.tsv"), 8).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("s0001"), "{msg}");
    assert!(msg.contains("masks/s0001.kiut"), "{msg}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn bad_manifest_line_is_a_validation_error() {
    let err = DatasetManifest::parse("s0\timages/a.kiut\ttrain\n", ".").unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");
    let err = DatasetManifest::parse("s0\ta\tb\tvalidation\n", ".").unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn volumes_of_depth_50_are_padded_for_three_levels() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    std::fs::create_dir_all(dir.path().join("masks")).unwrap();
    let n = 50 * 12 * 12;
    let img = Tensor::new(&[1, 50, 12, 12], (0..n).map(|i| i as f32).collect()).unwrap();
    let mask = Tensor::new(&[1, 50, 12, 12], (0..n).map(|i| (i % 7 == 0) as u8 as f32).collect()).unwrap();
    save_tensor(dir.path().join("images/v.kiut"), &img).unwrap();
    save_tensor(dir.path().join("masks/v.kiut"), &mask).unwrap();
    std::fs::write(
        dir.path().join("manifest.tsv"),
        "v\timages/v.kiut\tmasks/v.kiut\ttest\n",
    )
    .unwrap();
    let data = load_dataset(dir.path().join("manifest.tsv"), 8).unwrap();
    let r = data.split(Split::Test).next().unwrap();
    assert_eq!(r.image.shape(), &[1, 56, 16, 16]);
    assert_eq!(r.meta.original, [50, 12, 12]);
    assert_eq!(r.meta.pad, [6, 4, 4]);
    let back = overseg::data::crop(&r.image, &r.meta.original).unwrap();
    assert_eq!(back, load_tensor(dir.path().join("images/v.kiut")).unwrap());
}
