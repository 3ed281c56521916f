use proptest::prelude::*;

use teleop_core::curriculum::{cdf, sample_ratio, sample_rho_prime, CurriculumConfig, CurriculumState};
use teleop_core::observation::ObservationFrame;
use teleop_core::plant::pd_torque_with;
use teleop_core::protocol::{decode, encode, CommandPayload, Packet, PacketJson};
use teleop_core::reward::r_knee_normalized;
use teleop_core::robot::{JointGroup, JointSpec, Side};
use teleop_core::symmetry::MirrorSpec;
use teleop_core::transport::{simulated_transport, TransportConfig};
use teleop_core::{load_preset, Command, TorqueLaw};

fn unit() -> impl Strategy<Value = f64> {
    0.0f64..1.0
}

proptest! {
    #[test]
    fn ratio_never_exceeds_its_cap(rho in unit(), u1 in unit(), u2 in unit()) {
        let cap = sample_rho_prime(rho, u1);
        prop_assert!((0.0..=1.0).contains(&cap));
        let a = sample_ratio(rho, u1, u2);
        prop_assert!(a >= 0.0 && a <= cap);
    }

    #[test]
    fn inverse_cdf_is_monotone_and_consistent(rho in 0.0f64..0.999, u in 0.001f64..0.999, du in 0.0f64..0.001) {
        let x = sample_rho_prime(rho, u);
        prop_assert!(sample_rho_prime(rho, u + du) >= x);
        prop_assert!((cdf(rho, x) - u).abs() < 1e-9);
    }

    #[test]
    fn curriculum_level_is_capped(rewards in prop::collection::vec(0.0f64..1.0, 0..200)) {
        let mut s = CurriculumState::new(&CurriculumConfig::default());
        for r in rewards {
            s.maybe_promote(r);
            prop_assert!(s.rho_a() <= 1.0);
        }
    }

    #[test]
    fn torque_is_bounded(kp in 1.0f64..500.0, kd in 0.0f64..20.0, tmax in 0.1f64..300.0,
                         a in -5.0f64..5.0, q in -5.0f64..5.0, qd in -50.0f64..50.0) {
        let spec = JointSpec {
            name: "j".into(), group: JointGroup::Lower, side: Side::Center,
            pos_min: -5.0, pos_max: 5.0, vel_max: 50.0, torque_max: tmax, kp, kd, default_pos: 0.1,
        };
        for law in [TorqueLaw::Literal, TorqueLaw::Conventional] {
            let t = pd_torque_with(law, &spec, a, q, qd);
            prop_assert!(t.abs() <= tmax);
        }
    }

    #[test]
    fn knee_reward_is_never_positive(dh in -1.0f64..1.0, n in -0.5f64..1.5) {
        prop_assert!(r_knee_normalized(dh, n) <= 0.0);
        prop_assert!((r_knee_normalized(dh, n) - r_knee_normalized(-dh, 1.0 - n)).abs() < 1e-12);
    }

    #[test]
    fn packets_round_trip(seq in any::<u32>(), bits in prop::array::uniform32(any::<u32>())) {
        let floats = bits.map(f32::from_bits);
        let p = Packet::command(seq, CommandPayload::from_floats(&floats));
        let bytes = encode(&p).unwrap();
        let back = decode(&bytes).unwrap();
        let again = back.payload.as_ref().unwrap().to_floats().unwrap();
        prop_assert_eq!(again.map(f32::to_bits), bits);
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn decoding_garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
        let _ = decode(&bytes);
    }

    #[test]
    fn json_mirror_round_trips(seq in any::<u32>(), v in -2.0f32..2.0, w in -2.0f32..2.0, h in 0.0f32..1.0) {
        let mut payload = CommandPayload::zeros();
        payload.v_x = v;
        payload.omega_yaw = w;
        payload.h = h;
        let p = Packet::command(seq, payload);
        let text = serde_json::to_string(&PacketJson::from(&p)).unwrap();
        let back: Packet = serde_json::from_str::<PacketJson>(&text).unwrap().into();
        prop_assert_eq!(encode(&back).unwrap(), encode(&p).unwrap());
    }

    #[test]
    fn transport_is_fifo(gaps in prop::collection::vec(0.0f64..0.05, 1..200), jitter_ms in 0.0f64..20.0, seed in any::<u64>()) {
        let (tx, rx) = simulated_transport::<usize>(TransportConfig::from_millis(16.0, jitter_ms, 0.0), seed).unwrap();
        let mut now = 0.0;
        for (k, g) in gaps.iter().enumerate() {
            now += g;
            tx.send(now, k).unwrap();
        }
        let got = rx.recv_due(f64::INFINITY).unwrap();
        prop_assert_eq!(got.len(), gaps.len());
        for (k, d) in got.iter().enumerate() {
            prop_assert_eq!(d.msg, k);
            prop_assert!(d.delivered_at >= d.sent_at);
        }
        prop_assert!(got.windows(2).all(|w| w[0].delivered_at <= w[1].delivered_at));
    }

    #[test]
    fn clamping_is_idempotent(v in -5.0f64..5.0, w in -5.0f64..5.0, h in -1.0f64..2.0) {
        let desc = load_preset("gr1").unwrap();
        let once = Command::new(v, w, h).clamped(&desc);
        prop_assert_eq!(once.clamped(&desc), once);
    }

    #[test]
    fn mirror_is_an_involution(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let desc = load_preset("gr1").unwrap();
        let spec = MirrorSpec::new(&desc);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f = ObservationFrame((0..spec.layout.len()).map(|_| rng.random_range(-4.0..4.0)).collect());
        let back = spec.mirror_frame(&spec.mirror_frame(&f).unwrap()).unwrap();
        prop_assert_eq!(back, f);
        let a: Vec<f64> = (0..desc.n_lower()).map(|_| rng.random_range(-1.0..1.0)).collect();
        prop_assert_eq!(spec.mirror_action(&spec.mirror_action(&a).unwrap()).unwrap(), a);
    }
}
