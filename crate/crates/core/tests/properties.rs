use proptest::prelude::*;

use clf_rl::clf_reward::{
    lyapunov, reward_clf_decay_clip, reward_clf_decay_tanh, CareWeights, ClfConfig, OutputError, RewardWeights,
};
use clf_rl::env::{Env, EnvConfig, EnvKind, RewardVariant};
use clf_rl::gait_library::{convert_hlip, GaitLibrary, HLIP_FIT_DEGREE};
use clf_rl::hlip::{HlipParams, HlipReferenceConfig};
use clf_rl::reference::Parity;
use clf_rl::trainer::{Checkpoint, PpoConfig, TrainSetup};

fn arb_weights() -> impl Strategy<Value = CareWeights> {
    (0.1..10.0f64, 0.0..10.0f64, 0.1..10.0f64).prop_map(|(q_pos, q_vel, r)| CareWeights { q_pos, q_vel, r })
}

fn arb_variant() -> impl Strategy<Value = RewardVariant> {
    prop::sample::select(RewardVariant::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lyapunov_is_quadratic_and_positive(
        w in prop::collection::vec(arb_weights(), 1..4),
        e in prop::collection::vec(-1.0..1.0f64, 8),
        c in -3.0..3.0f64,
    ) {
        let k = w.len();
        let bundle = ClfConfig { channels: w, ..ClfConfig::default() }.bundle(k).unwrap();
        let eta = OutputError::new(e[..k].to_vec(), e[4..4 + k].to_vec()).unwrap();
        let v = lyapunov(&eta, &bundle).unwrap();
        prop_assert!(v >= 0.0);
        let vc = lyapunov(&eta.scaled(c), &bundle).unwrap();
        prop_assert!((vc - c * c * v).abs() <= 1e-10 * (1.0 + v * c * c));
        let mu_min = bundle.blocks().iter().map(|b| clf_rl::clf_reward::sym2_eigenvalues(b).1).fold(f64::INFINITY, f64::min);
        let n2 = eta.norm().powi(2);
        prop_assert!(v >= mu_min * n2 - 1e-12 && v <= bundle.mu_max() * n2 + 1e-12);
    }

    #[test]
    fn decay_rewards_are_bounded(v in 0.0..10.0f64, vdot in -50.0..50.0f64, w in 0.0..5.0f64) {
        let bundle = ClfConfig::default().bundle(2).unwrap();
        let t = reward_clf_decay_tanh(v, vdot, &bundle, w);
        prop_assert!(t.abs() <= w);
        let c = reward_clf_decay_clip(v, vdot, &bundle, w);
        prop_assert!((-w..=0.0).contains(&c));
        if vdot + bundle.lambda() * v <= 0.0 {
            prop_assert!(t >= 0.0);
            prop_assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn env_replays_bitwise(
        seed in any::<u64>(),
        command in -0.75..0.75f64,
        stepper in any::<bool>(),
        variant in arb_variant(),
        actions in prop::collection::vec(-1.5..1.5f64, 30),
    ) {
        let cfg = EnvConfig {
            kind: if stepper { EnvKind::HlipStepper } else { EnvKind::DoubleIntegrator },
            episode_len: 30,
            ..EnvConfig::default()
        };
        let roll = || {
            let mut env = Env::new(cfg.clone(), &ClfConfig::default(), RewardWeights::default(), variant).unwrap();
            let (obs, _) = env.reset(seed, command).unwrap();
            let mut trace = obs.values;
            for a in &actions {
                if env.is_done() {
                    break;
                }
                let r = env.step(&[*a]).unwrap();
                trace.extend(r.obs.values);
                trace.push(r.reward.total);
                trace.push(r.info.lyapunov);
            }
            trace
        };
        let (a, b) = (roll(), roll());
        prop_assert!(a.iter().all(|x| x.is_finite()));
        prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn converted_library_round_trips(
        mut vs in prop::collection::btree_set(-10i32..=10, 1..5),
        t in 0.0..2.0f64,
        odd in any::<bool>(),
    ) {
        let velocities: Vec<f64> = std::mem::take(&mut vs).into_iter().map(|v| v as f64 * 0.075).collect();
        let (lib, reset) = convert_hlip(&velocities, &HlipParams::default(), &HlipReferenceConfig::default(), HLIP_FIT_DEGREE).unwrap();
        let text = lib.to_json_string().unwrap();
        let back = GaitLibrary::from_json_str(&text).unwrap();
        prop_assert_eq!(&back.to_json_string().unwrap(), &text);
        let parity = if odd { Parity::Odd } else { Parity::Even };
        for (a, b) in lib.entries().iter().zip(back.entries()) {
            prop_assert_eq!(a.reference_at(t, parity).unwrap(), b.reference_at(t, parity).unwrap());
            prop_assert!(a.impact_invariance_residual(&reset).unwrap() < 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_json_round_trips(seed in any::<u64>(), variant in arb_variant(), stepper in any::<bool>()) {
        let mut env = EnvConfig::default();
        if stepper {
            env.kind = EnvKind::HlipStepper;
        }
        let setup = TrainSetup {
            env,
            clf: ClfConfig::default(),
            weights: RewardWeights::default(),
            ppo: PpoConfig { seed, actor_hidden: vec![8], critic_hidden: vec![8], ..PpoConfig::default() },
            variant,
        };
        let ckpt = setup.initial_checkpoint().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        prop_assert_eq!(&back, &ckpt);
    }
}
