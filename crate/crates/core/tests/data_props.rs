use std::path::Path;

use crosslink::data::augment::{apply, AugmentParams, AugmentSpec};
use crosslink::data::pgm::{read_mask, write_mask, Pgm};
use crosslink::data::synth::{generate, generate_one, SynthSpec};
use crosslink::data::{GrayImage, Sample};
use crosslink::metrics::BinaryMask;
use proptest::prelude::*;
use rand::SeedableRng;

fn spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n_train: 4,
        n_val: 1,
        n_test: 1,
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn sample_depends_only_on_seed_and_index() {
    let few = generate(&spec(3)).unwrap();
    let more = generate(&SynthSpec { n_train: 12, ..spec(3) }).unwrap();
    assert_eq!(few[..4], more[..4]);
    assert_eq!(generate_one(&spec(3), 2).unwrap(), few[2]);
    assert_ne!(few[0].image, few[1].image);
}

#[test]
fn pixels_are_8bit_levels() {
    for s in generate(&spec(1)).unwrap() {
        for &v in s.image.pixels() {
            let level = v * 255.0;
            assert!((level - level.round()).abs() < 1e-9 && (0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn clean_images_step_at_the_mask_edge() {
    let clean = SynthSpec {
        noise_sigma: 0.0,
        blur_sigma_range: (0.0, 0.0),
        area_range: (0.01, 0.05),
        n_train: 8,
        ..spec(5)
    };
    // texture slope per pixel stays below 3 * 0.06 * 0.5, plus one quantization level
    let slack = 0.09 + 1.0 / 255.0 + 1e-9;
    for s in generate(&clean).unwrap() {
        let offset = s.meta.as_ref().unwrap().intensity_offset;
        let (h, w) = (s.image.height(), s.image.width());
        for y in 0..h {
            for x in 0..w - 1 {
                let d = s.image.get(y, x + 1) - s.image.get(y, x);
                let step = f64::from(u8::from(s.mask.get(y, x + 1))) - f64::from(u8::from(s.mask.get(y, x)));
                assert!((d - step * offset).abs() <= slack, "{} at ({y},{x}): {d} vs step {step}", s.id);
            }
        }
    }
}

fn toy(h: usize, w: usize) -> Sample {
    Sample {
        id: "t".into(),
        image: GrayImage::new(h, w, (0..h * w).map(|i| ((i * 7) % 23) as f64 / 22.0).collect()).unwrap(),
        mask: BinaryMask::new(h, w, (0..h * w).map(|i| u8::from((i * 3) % 11 < 4)).collect()).unwrap(),
        meta: None,
    }
}

#[test]
fn flip_mirrors_columns() {
    let s = toy(5, 7);
    let out = apply(&s, &AugmentParams { flip: true, ..AugmentParams::IDENTITY }).unwrap();
    for y in 0..5 {
        for x in 0..7 {
            assert_eq!(out.image.get(y, x), s.image.get(y, 6 - x));
            assert_eq!(out.mask.get(y, x), s.mask.get(y, 6 - x));
        }
    }
}

#[test]
fn half_turn_reverses_both_axes() {
    let s = toy(9, 9);
    let out = apply(&s, &AugmentParams { rotation_deg: 180.0, ..AugmentParams::IDENTITY }).unwrap();
    for y in 0..9 {
        for x in 0..9 {
            assert!((out.image.get(y, x) - s.image.get(8 - y, 8 - x)).abs() < 1e-9);
            assert_eq!(out.mask.get(y, x), s.mask.get(8 - y, 8 - x));
        }
    }
}

#[test]
fn augment_rejects_bad_input() {
    let mut s = toy(4, 4);
    assert!(apply(&s, &AugmentParams { zoom: 0.0, ..AugmentParams::IDENTITY }).is_err());
    s.mask = BinaryMask::zeros(4, 5);
    assert!(apply(&s, &AugmentParams::IDENTITY).is_err());
    assert!(AugmentSpec { zoom_range: (2.0, 1.0), ..AugmentSpec::default() }.validate().is_err());
    assert!(AugmentSpec { flip_probability: 1.5, ..AugmentSpec::default() }.validate().is_err());
}

fn decode(bytes: &[u8]) -> crosslink::Result<Pgm> {
    Pgm::decode(bytes, Path::new("x.pgm"))
}

#[test]
fn pgm_header_variants_and_errors() {
    let p = decode(b"P5 # comment\n2 1\n255\n\x01\x02").unwrap();
    assert_eq!((p.width, p.height, p.pixels.as_slice()), (2, 1, &[1u8, 2][..]));
    for (bytes, needle) in [
        (&b"P2\n1 1\n255\n\x00"[..], "P5"),
        (b"P5\n2 2\n255\n\x00", "truncated"),
        (b"P5\n1 1\n255\n\x00\x00", "trailing"),
        (b"P5\n1 1\n65535\n\x00", "maxval"),
        (b"P5\n1 1\n9\n\x0a", "exceeds"),
        (b"P5\n0 1\n255\n", "empty"),
    ] {
        let e = decode(bytes).unwrap_err().to_string();
        assert!(e.contains(needle), "{e}");
    }
}

#[test]
fn mask_files_must_be_0_or_255() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pgm");
    Pgm { width: 2, height: 1, maxval: 255, pixels: vec![0, 7] }.write(&path).unwrap();
    let e = read_mask(&path).unwrap_err().to_string();
    assert!(e.contains("neither 0 nor 255"), "{e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn synthetic_area_tracks_request(seed in 0u64..1000, lo in 0.002f64..0.05, span in 1.0f64..4.0) {
        let hi = (lo * span).min(0.25);
        let s = SynthSpec { area_range: (lo, hi), n_train: 2, n_val: 0, n_test: 0, ..spec(seed) };
        // one row of pixels of slack for the discrete fit
        let tol = 1.0 / s.height as f64;
        for sample in generate(&s).unwrap() {
            let f = sample.mask.area_fraction();
            prop_assert!(f >= lo - tol && f <= hi + tol, "fraction {} outside [{}, {}]", f, lo, hi);
            let target = sample.meta.unwrap().target_fraction;
            prop_assert!(target >= lo - 1e-12 && target <= hi + 1e-12);
        }
    }

    #[test]
    fn augment_keeps_size_and_binarity(seed in 0u64..10_000, h in 4usize..20, w in 4usize..20) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let params = AugmentSpec::default().sample(&mut rng);
        let out = apply(&toy(h, w), &params).unwrap();
        prop_assert_eq!((out.image.height(), out.image.width()), (h, w));
        prop_assert_eq!((out.mask.height(), out.mask.width()), (h, w));
        prop_assert!(out.mask.pixels().iter().all(|&v| v <= 1));
        prop_assert!(out.image.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pgm_round_trip(h in 1usize..12, w in 1usize..12, maxval in 1u16..=255, raw in prop::collection::vec(any::<u8>(), 144)) {
        let pixels: Vec<u8> = raw[..h * w].iter().map(|&b| (u16::from(b) % (maxval + 1)) as u8).collect();
        let p = Pgm { width: w, height: h, maxval, pixels };
        prop_assert_eq!(decode(&p.encode()).unwrap(), p);
    }

    #[test]
    fn mask_file_round_trip(h in 1usize..10, w in 1usize..10, raw in prop::collection::vec(0u8..2, 100)) {
        let m = BinaryMask::new(h, w, raw[..h * w].to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        write_mask(&path, &m).unwrap();
        prop_assert_eq!(read_mask(&path).unwrap(), m);
    }
}
