use proptest::prelude::*;
use vispgan::blend::{poisson_blend_frame, BlendRegion, Frame};
use vispgan::chargrid::{binary_char_code, decode_binary_char_code, Alphabet};
use vispgan::eval::{compute_feature_stats, fid_score};
use vispgan::losses::interpolate;
use vispgan::synthcorpus::temporal_crop;
use vispgan::trainer::lr_schedule_linear;
use vispgan::vsgc::{read_clip, write_clip, DType};
use vispgan::{Tensor, VideoClip};

fn clip_strategy() -> impl Strategy<Value = VideoClip> {
    (1usize..5, 1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(t, h, w, c)| {
        prop::collection::vec(-1.0f32..=1.0, t * h * w * c)
            .prop_map(move |data| VideoClip::new(t, h, w, c, data).unwrap())
    })
}

fn features(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f32_clips_roundtrip_bit_exactly(clip in clip_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.vsgc");
        write_clip(&path, &clip, DType::F32).unwrap();
        let back = read_clip(&path).unwrap();
        prop_assert_eq!(back.dims(), clip.dims());
        let bits = |c: &VideoClip| c.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&clip));
    }

    #[test]
    fn temporal_crop_keeps_the_centre(clip in clip_strategy(), keep in 1usize..5) {
        let t = clip.frames();
        prop_assume!(keep <= t);
        let out = temporal_crop(&clip, keep).unwrap();
        let lead = (t - keep) / 2;
        prop_assert_eq!(out.frames(), keep);
        for k in 0..keep {
            prop_assert_eq!(out.frame(k), clip.frame(lead + k));
        }
    }

    #[test]
    fn fid_is_symmetric_nonnegative_and_translation_invariant(
        a in features(12, 3),
        b in features(9, 3),
        shift in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let stats = |s: &[Vec<f64>]| compute_feature_stats(s).unwrap();
        let ab = fid_score(&stats(&a), &stats(&b)).unwrap();
        let ba = fid_score(&stats(&b), &stats(&a)).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
        let moved = |s: &[Vec<f64>]| -> Vec<Vec<f64>> {
            s.iter().map(|v| v.iter().zip(&shift).map(|(x, d)| x + d).collect()).collect()
        };
        let moved_ab = fid_score(&stats(&moved(&a)), &stats(&moved(&b))).unwrap();
        prop_assert!((ab - moved_ab).abs() < 1e-7 * (1.0 + ab));
    }

    #[test]
    fn blend_ignores_a_constant_offset_in_the_source(
        seed in 0u32..1000,
        offset in -1.0f64..1.0,
        top in 0usize..3,
        left in 0usize..3,
        h in 3usize..6,
        w in 3usize..6,
    ) {
        let (fh, fw) = (9, 9);
        let data = (0..fh * fw).map(|i| ((i as f64 + seed as f64) * 0.77).sin()).collect();
        let target = Frame::new(fh, fw, 1, data).unwrap();
        let mut source = target.crop(top, left, h, w).unwrap();
        source.data.iter_mut().for_each(|v| *v += offset);
        let (out, _) = poisson_blend_frame(&target, &source, &BlendRegion::rect(top, left, h, w), 1e-12).unwrap();
        let worst = out.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-8, "{}", worst);
    }

    #[test]
    fn interpolation_endpoints(n in 1usize..4, d in 1usize..5, seed in 0u32..100) {
        let make = |k: u32| -> Vec<f64> { (0..n * d).map(|i| ((i as u32 * 7 + seed + k) as f64).cos()).collect() };
        let real = Tensor::from_vec(make(0), &[n, d]);
        let fake = Tensor::from_vec(make(1), &[n, d]);
        prop_assert_eq!(interpolate(&real, &fake, &vec![1.0; n]).unwrap().to_vec(), real.to_vec());
        prop_assert_eq!(interpolate(&real, &fake, &vec![0.0; n]).unwrap().to_vec(), fake.to_vec());
    }

    #[test]
    fn linear_decay_is_bounded_and_non_increasing(epochs in 2usize..40, start_frac in 0.0f64..1.0) {
        let start = ((epochs as f64 * start_frac) as usize).min(epochs - 1);
        let lrs: Vec<f64> = (0..epochs).map(|e| lr_schedule_linear(1e-3, e, epochs, start)).collect();
        prop_assert!(lrs.iter().all(|&v| (0.0..=1e-3).contains(&v)));
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(lrs[..=start].iter().all(|&v| v == 1e-3));
    }

    #[test]
    fn binary_codes_roundtrip(i in 0usize..26) {
        let a = Alphabet::english();
        prop_assert_eq!(decode_binary_char_code(&binary_char_code(i, &a).unwrap()), i);
    }
}
