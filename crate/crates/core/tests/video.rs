use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenebias::video::{
    self, apply_mask, build_augmented_set, composite_swap, select_person_box, swap_jobs, DetectionRecord,
    FrameSequence, MaskSequence,
};
use scenebias::{Error, Manifest, ManifestItem};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_video(r: &mut ChaCha8Rng, t: usize, h: usize, w: usize) -> FrameSequence {
    FrameSequence::new(t, h, w, (0..t * h * w * 3).map(|_| r.gen()).collect()).unwrap()
}

fn random_mask(r: &mut ChaCha8Rng, t: usize, h: usize, w: usize) -> MaskSequence {
    MaskSequence::new(t, h, w, (0..t * h * w).map(|_| r.gen_range(0..2)).collect()).unwrap()
}

fn det(label: &str, conf: f64, frame: usize, x0: f64) -> DetectionRecord {
    DetectionRecord {
        frame,
        label: label.into(),
        confidence: conf,
        bbox: [x0, 0.0, x0 + 5.0, 5.0],
    }
}

#[test]
fn person_box_filters_labels_and_breaks_ties() {
    let picked = select_person_box(&[det("person", 0.9, 0, 1.0), det("dog", 0.99, 0, 1.0)]).unwrap();
    assert_eq!((picked.label.as_str(), picked.confidence), ("person", 0.9));
    let picked = select_person_box(&[det("person", 0.7, 3, 1.0), det("person", 0.7, 1, 9.0)]).unwrap();
    assert_eq!(picked.frame, 1);
    let picked = select_person_box(&[det("person", 0.7, 1, 9.0), det("person", 0.7, 1, 2.0)]).unwrap();
    assert_eq!(picked.bbox[0], 2.0);
    assert!(matches!(
        select_person_box(&[det("cat", 0.5, 0, 0.0)]),
        Err(Error::NoHuman(1))
    ));
    assert!(matches!(select_person_box(&[]), Err(Error::NoHuman(0))));
}

#[test]
fn person_box_matches_full_scan_oracle() {
    let mut r = rng(11);
    for _ in 0..50 {
        let dets: Vec<DetectionRecord> = (0..100)
            .map(|_| {
                let label = ["person", "dog", "car"][r.gen_range(0..3)];
                // Coarse confidences so ties occur.
                det(
                    label,
                    r.gen_range(0..5) as f64 / 4.0,
                    r.gen_range(0..6),
                    r.gen_range(0..4) as f64,
                )
            })
            .collect();
        let mut persons: Vec<&DetectionRecord> = dets.iter().filter(|d| d.label == "person").collect();
        persons.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap()
                .then(a.frame.cmp(&b.frame))
                .then(a.bbox[0].partial_cmp(&b.bbox[0]).unwrap())
        });
        assert_eq!(&select_person_box(&dets).unwrap(), persons[0]);
    }
}

#[test]
fn detection_validation() {
    assert!(det("person", 1.2, 0, 0.0).validate(None).is_err());
    let mut d = det("person", 0.5, 0, 0.0);
    d.bbox = [4.0, 0.0, 2.0, 3.0];
    assert!(d.validate(None).is_err());
    assert!(det("person", 0.5, 0, 30.0).validate(Some((32, 32))).is_err());
    assert!(det("person", 0.5, 0, 3.0).validate(Some((32, 32))).is_ok());
}

#[test]
fn apply_mask_trivial_cases_and_oracle() {
    let mut r = rng(1);
    let v = random_video(&mut r, 3, 4, 5);
    assert_eq!(apply_mask(&v, &MaskSequence::filled(3, 4, 5, true)).unwrap(), v);
    assert_eq!(
        apply_mask(&v, &MaskSequence::filled(3, 4, 5, false)).unwrap(),
        FrameSequence::black(3, 4, 5)
    );
    for _ in 0..100 {
        let (t, h, w) = (r.gen_range(1..4), r.gen_range(1..9), r.gen_range(1..9));
        let v = random_video(&mut r, t, h, w);
        let m = random_mask(&mut r, t, h, w);
        let out = apply_mask(&v, &m).unwrap();
        for tt in 0..t {
            for y in 0..h {
                for x in 0..w {
                    let want = if m.get(tt, y, x) { v.pixel(tt, y, x) } else { [0; 3] };
                    assert_eq!(out.pixel(tt, y, x), want);
                }
            }
        }
        assert_eq!(apply_mask(&out, &m).unwrap(), out, "idempotent");
    }
}

#[test]
fn apply_mask_rejects_misaligned_masks() {
    let v = FrameSequence::black(2, 4, 4);
    let err = apply_mask(&v, &MaskSequence::filled(3, 4, 4, true)).unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
}

#[test]
fn composite_swap_trivial_cases() {
    let mut r = rng(2);
    let h = random_video(&mut r, 4, 6, 6);
    let b = random_video(&mut r, 4, 6, 6);
    assert_eq!(composite_swap(&h, &MaskSequence::filled(4, 6, 6, true), &b).unwrap(), h);
    assert_eq!(
        composite_swap(&h, &MaskSequence::filled(4, 6, 6, false), &b).unwrap(),
        b
    );
    let empty = FrameSequence::black(0, 6, 6);
    assert!(composite_swap(&h, &MaskSequence::filled(4, 6, 6, true), &empty).is_err());
}

#[test]
fn composite_swap_matches_select_oracle_with_normalized_background() {
    let mut r = rng(3);
    for _ in 0..100 {
        let (t, hh, ww) = (r.gen_range(1..5), r.gen_range(1..8), r.gen_range(1..8));
        let (bt, bh, bw) = (r.gen_range(1..7), r.gen_range(1..12), r.gen_range(1..12));
        let human = random_video(&mut r, t, hh, ww);
        let m = random_mask(&mut r, t, hh, ww);
        let bg = random_video(&mut r, bt, bh, bw);
        let out = composite_swap(&human, &m, &bg).unwrap();
        assert_eq!(out, composite_swap(&human, &m, &bg).unwrap());
        for tt in 0..t {
            for y in 0..hh {
                for x in 0..ww {
                    // Background looped in time, nearest-neighbour in space.
                    let want = if m.get(tt, y, x) {
                        human.pixel(tt, y, x)
                    } else {
                        bg.pixel(tt % bt, y * bh / hh, x * bw / ww)
                    };
                    assert_eq!(out.pixel(tt, y, x), want);
                }
            }
        }
    }
}

#[test]
fn fit_to_truncates_from_frame_zero() {
    let mut r = rng(4);
    let bg = random_video(&mut r, 6, 3, 3);
    let fit = bg.fit_to(2, 3, 3).unwrap();
    assert_eq!(fit.frame(0), bg.frame(0));
    assert_eq!(fit.frame(1), bg.frame(1));
    assert_eq!(bg.fit_to(8, 3, 3).unwrap().frame(7), bg.frame(1));
}

#[test]
fn netpbm_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(5);
    let v = random_video(&mut r, 3, 5, 7);
    let m = random_mask(&mut r, 3, 5, 7);
    video::io::write_frames(&dir.path().join("f"), &v).unwrap();
    video::io::write_masks(&dir.path().join("m"), &m).unwrap();
    assert_eq!(video::io::read_frames(&dir.path().join("f")).unwrap(), v);
    assert_eq!(video::io::read_masks(&dir.path().join("m")).unwrap(), m);
    let header = std::fs::read(dir.path().join("f/frame_00000.ppm")).unwrap();
    assert!(header.starts_with(b"P6\n7 5\n255\n"));

    let gray = dir.path().join("m/frame_00001.pgm");
    video::io::write_pgm(&gray, 7, 5, &[128; 35]).unwrap();
    assert!(matches!(
        video::io::read_masks(&dir.path().join("m")),
        Err(Error::Format { .. })
    ));

    std::fs::remove_file(dir.path().join("f/frame_00001.ppm")).unwrap();
    let err = video::io::read_frames(&dir.path().join("f")).unwrap_err();
    assert!(err.to_string().contains("frame 1 missing"), "{err}");
}

#[test]
fn ppm_header_comments_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.ppm");
    let mut bytes = b"P6\n# made by hand\n2 1 # trailing\n255\n".to_vec();
    bytes.extend([1, 2, 3, 4, 5, 6]);
    std::fs::write(&p, bytes).unwrap();
    assert_eq!(video::io::read_ppm(&p).unwrap(), (2, 1, vec![1, 2, 3, 4, 5, 6]));
}

fn synthetic_manifest(n: usize, with_masks: bool) -> Manifest {
    let items = (0..n)
        .map(|i| {
            let mut it = ManifestItem::new(format!("v{i:06}"), format!("c{}", i % 50), format!("/data/v{i:06}"));
            if with_masks {
                it.masks_dir = Some(format!("/data/m{i:06}").into());
            }
            it
        })
        .collect();
    Manifest::new(Vec::new(), items)
}

fn pool(n: usize) -> Manifest {
    let items = (0..n)
        .map(|i| {
            let mut it = ManifestItem::new(format!("p{i}"), "scene", format!("/pool/p{i}"));
            it.background_class = Some(format!("scene{}", i % 7));
            it
        })
        .collect();
    Manifest::new(Vec::new(), items)
}

#[test]
fn augmentation_doubles_the_training_set() {
    let out = build_augmented_set(&synthetic_manifest(24_668, true), &pool(365), 7, "/out".as_ref()).unwrap();
    assert_eq!(out.len(), 49_336);
    let swaps = out.items.iter().filter(|i| i.background_video.is_some()).count();
    assert_eq!(swaps, 24_668);
    assert!(out.items.windows(2).all(|w| w[0].video_id < w[1].video_id));
}

#[test]
fn augmentation_edge_cases_and_determinism() {
    let empty = build_augmented_set(&Manifest::default(), &Manifest::default(), 1, "/o".as_ref()).unwrap();
    assert!(empty.is_empty());
    let m = synthetic_manifest(40, true);
    let a = build_augmented_set(&m, &pool(9), 3, "/o".as_ref()).unwrap();
    assert_eq!(a, build_augmented_set(&m, &pool(9), 3, "/o".as_ref()).unwrap());
    assert_ne!(a, build_augmented_set(&m, &pool(9), 4, "/o".as_ref()).unwrap());
    assert!(build_augmented_set(&m, &Manifest::default(), 3, "/o".as_ref()).is_err());

    let mut mixed = synthetic_manifest(10, true);
    mixed.items[3].masks_dir = None;
    mixed.items[8].masks_dir = None;
    let out = build_augmented_set(&mixed, &pool(2), 1, "/o".as_ref()).unwrap();
    assert_eq!(out.len(), 16);
    assert!(out
        .items
        .iter()
        .all(|i| !i.video_id.starts_with("v000003") && !i.video_id.starts_with("v000008")));
}

#[test]
fn augmented_swaps_materialize_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut r = rng(6);
    let mut items = Vec::new();
    for i in 0..3 {
        let id = format!("h{i}");
        video::io::write_frames(&root.join(&id), &random_video(&mut r, 4, 6, 8)).unwrap();
        video::io::write_masks(&root.join(format!("{id}_m")), &random_mask(&mut r, 4, 6, 8)).unwrap();
        let mut it = ManifestItem::new(&id, "walk", root.join(&id));
        it.masks_dir = Some(root.join(format!("{id}_m")));
        items.push(it);
    }
    let data = Manifest::new(Vec::new(), items);
    video::io::write_frames(&root.join("bg"), &random_video(&mut r, 2, 10, 10)).unwrap();
    let bgs = Manifest::new(Vec::new(), vec![ManifestItem::new("bg", "beach", root.join("bg"))]);
    let out_root = root.join("out");
    let aug = build_augmented_set(&data, &bgs, 0, &out_root).unwrap();
    let jobs = swap_jobs(&aug, &data, &bgs).unwrap();
    assert_eq!(jobs.len(), 3);
    for job in &jobs {
        job.run().unwrap();
        let human = video::io::read_frames(&job.human_frames).unwrap();
        let masks = video::io::read_masks(&job.human_masks).unwrap();
        let bg = video::io::read_frames(&job.background_frames).unwrap();
        assert_eq!(
            video::io::read_frames(&job.out_frames).unwrap(),
            composite_swap(&human, &masks, &bg).unwrap()
        );
    }
    aug.save(&out_root.join("manifest.json")).unwrap();
    let text = std::fs::read_to_string(out_root.join("manifest.json")).unwrap();
    assert!(text.contains("\"frames_dir\": \"augmented/h0__aug\""), "{text}");
    assert_eq!(Manifest::load(&out_root.join("manifest.json")).unwrap(), aug);
}

#[test]
fn manifest_load_is_strict() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    std::fs::write(
        &p,
        r#"{"items":[{"video_id":"a","human_class":"x","frames_dir":"f","colour":1}]}"#,
    )
    .unwrap();
    let err = Manifest::load(&p).unwrap_err();
    assert!(err.to_string().contains("colour"), "{err}");
    std::fs::write(&p, r#"{"items":[{"video_id":"a","human_class":"x","frames_dir":"f"},{"video_id":"a","human_class":"x","frames_dir":"g"}]}"#).unwrap();
    assert!(Manifest::load(&p).unwrap_err().to_string().contains("duplicate"));
    std::fs::write(
        &p,
        r#"{"classes":["x"],"items":[{"video_id":"a","human_class":"y","frames_dir":"f"}]}"#,
    )
    .unwrap();
    assert!(Manifest::load(&p).is_err());
    std::fs::write(
        &p,
        r#"{"items":[{"video_id":"a","human_class":"x","background_class":null,"frames_dir":"f","masks_dir":null}]}"#,
    )
    .unwrap();
    let m = Manifest::load(&p).unwrap();
    assert_eq!(m.items[0].frames_dir, dir.path().join("f"));
}
