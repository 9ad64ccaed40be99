use std::collections::VecDeque;

use super::*;
use crate::hyperbolicity::{delta_fourpoint_bruteforce, delta_maxmin};
use proptest::prelude::*;

fn empty_3x3() -> ProcGridEnv {
    ProcGridEnv::from_ascii("A..\n...\n..G", 64).unwrap()
}

/// Independent reachability check over the rendered layout.
fn reachable_avoiding_hazards(env: &ProcGridEnv) -> bool {
    let n = env.size();
    let blocked = |r: usize, c: usize| env.walls()[r * n + c] || env.hazards()[r * n + c];
    let mut seen = vec![vec![false; n]; n];
    let (sr, sc) = env.agent();
    let mut q = VecDeque::from([(sr, sc)]);
    seen[sr][sc] = true;
    while let Some((r, c)) = q.pop_front() {
        if (r, c) == env.goal() {
            return true;
        }
        let next = [
            (r.wrapping_sub(1), c),
            (r + 1, c),
            (r, c.wrapping_sub(1)),
            (r, c + 1),
        ];
        for (nr, nc) in next {
            if nr < n && nc < n && !seen[nr][nc] && !blocked(nr, nc) {
                seen[nr][nc] = true;
                q.push_back((nr, nc));
            }
        }
    }
    false
}

#[test]
fn generation_is_deterministic() {
    let cfg = GridConfig::default();
    for s in 0..20 {
        let a = ProcGridEnv::generate(LevelSeed(s), &cfg).unwrap();
        let b = ProcGridEnv::generate(LevelSeed(s), &cfg).unwrap();
        assert_eq!(a, b);
    }
    let a = ProcGridEnv::generate(LevelSeed(1), &cfg).unwrap();
    let b = ProcGridEnv::generate(LevelSeed(2), &cfg).unwrap();
    assert_ne!(a, b);
}

#[test]
fn ten_thousand_levels_are_solvable() {
    let cfg = GridConfig::default();
    for s in 0..10_000u64 {
        let env = ProcGridEnv::generate(LevelSeed(s.wrapping_mul(0x9E37_79B9)), &cfg).unwrap();
        assert!(reachable_avoiding_hazards(&env), "seed {s}\n{env}");
        assert!(!env.walls()[env.agent().0 * 9 + env.agent().1]);
    }
}

#[test]
fn seed_split_is_disjoint() {
    let split = SeedSplit::new(32, 200).unwrap();
    assert_eq!(split.train.first(), Some(&LevelSeed(0)));
    assert_eq!(split.test.first(), Some(&LevelSeed(1000)));
    assert!(split.train.iter().all(|s| !split.test.contains(s)));
    assert!(SeedSplit::new(1001, 1).is_err());
}

#[test]
fn greedy_path_on_empty_grid() {
    let mut env = empty_3x3();
    let mut total = 0.0;
    let plan = [Action::Right, Action::Right, Action::Down, Action::Down];
    for (i, a) in plan.into_iter().enumerate() {
        let st = env.step(a).unwrap();
        total += st.reward;
        assert_eq!(st.done, i == 3);
    }
    assert_eq!(total, 1.0);
    assert_eq!(env.steps(), 4);
    assert_eq!(env.step(Action::Up), Err(EnvError::EpisodeFinished));
}

#[test]
fn walls_and_edges_block_movement() {
    let mut env = ProcGridEnv::from_ascii("A#.\n...\n..G", 64).unwrap();
    let st = env.step(Action::Right).unwrap();
    assert_eq!((env.agent(), st.reward, st.done), ((0, 0), 0.0, false));
    env.step(Action::Up).unwrap();
    env.step(Action::Left).unwrap();
    assert_eq!(env.agent(), (0, 0));
}

#[test]
fn hazards_and_collectibles() {
    let mut env = ProcGridEnv::from_ascii("AC.\n.H.\n..G", 64).unwrap();
    assert_eq!(env.step(Action::Right).unwrap().reward, COLLECTIBLE_REWARD);
    // Collected items do not pay twice.
    env.step(Action::Left).unwrap();
    assert_eq!(env.step(Action::Right).unwrap().reward, 0.0);
    let st = env.step(Action::Down).unwrap();
    assert_eq!((st.reward, st.done), (HAZARD_REWARD, true));
    env.reset();
    assert!(env.collectibles()[1]);
}

#[test]
fn step_cap_ends_episode_without_reward() {
    let mut env = ProcGridEnv::from_ascii("A..\n...\n..G", 3).unwrap();
    for i in 0..3 {
        let st = env.step(Action::Up).unwrap();
        assert_eq!(st.reward, 0.0);
        assert_eq!(st.done, i == 2);
    }
}

#[test]
fn observation_is_one_hot() {
    let env = ProcGridEnv::from_ascii("A#.\nC.H\n..G", 64).unwrap();
    let obs = env.observe();
    assert_eq!(obs.len(), 5 * 9);
    let plane = |ch: usize| &obs[ch * 9..(ch + 1) * 9];
    assert_eq!(plane(0), &[0., 1., 0., 0., 0., 0., 0., 0., 0.]);
    assert_eq!(plane(1)[0], 1.0);
    assert_eq!(plane(2)[8], 1.0);
    assert_eq!(plane(3)[5], 1.0);
    assert_eq!(plane(4)[3], 1.0);
    assert_eq!(obs.iter().sum::<f64>(), 5.0);
    assert_eq!(env.render_ascii(), "A#.\nC.H\n..G\n");
}

#[test]
fn layout_errors() {
    assert!(ProcGridEnv::from_ascii("A.\n.", 8).is_err());
    assert!(ProcGridEnv::from_ascii("..\n..", 8).is_err());
    assert!(ProcGridEnv::from_ascii("AX\n.G", 8).is_err());
    assert!(Action::from_index(4).is_err());
}

#[test]
fn vec_env_level_streams_ignore_actions() {
    let levels =
        generate_levels(&SeedSplit::new(8, 0).unwrap().train, &GridConfig::default()).unwrap();
    let trace = |policy: usize| {
        let mut v = VecEnv::new(levels.clone(), 3, 42).unwrap();
        let mut starts: Vec<Vec<String>> = vec![Vec::new(); 3];
        for step in 0..400 {
            let actions: Vec<usize> = (0..3).map(|s| (step * policy + s) % 4).collect();
            let out = v.step(&actions).unwrap();
            for slot in 0..3 {
                if out.dones[slot] && starts[slot].len() < 3 {
                    starts[slot].push(v.envs()[slot].render_ascii());
                }
            }
        }
        starts
    };
    let (a, b) = (trace(1), trace(3));
    for slot in 0..3 {
        let m = a[slot].len().min(b[slot].len());
        assert!(m > 0);
        assert_eq!(a[slot][..m], b[slot][..m]);
    }
}

#[test]
fn vec_env_reports_episode_returns() {
    let mut v = VecEnv::new(vec![empty_3x3()], 2, 0).unwrap();
    assert_eq!(v.observations().shape(), &[2, 45]);
    let r = 3; // Right
    let d = 1; // Down
    for a in [r, r, d] {
        let out = v.step(&[a, a]).unwrap();
        assert!(out.finished.iter().all(Option::is_none));
    }
    let out = v.step(&[d, d]).unwrap();
    assert_eq!(out.finished, vec![Some(1.0), Some(1.0)]);
    assert_eq!(v.envs()[0].agent(), (0, 0));
}

#[test]
fn tree_examples() {
    let (d, nodes) = tree_metric(&TreeSpec::new(2, 1).unwrap()).unwrap();
    assert_eq!(nodes.len(), 3);
    assert_eq!((d.get(1, 2), d.get(0, 1)), (2.0, 1.0));
    let (d, nodes) = tree_metric(&TreeSpec::new(2, 5).unwrap()).unwrap();
    assert_eq!(nodes.len(), 63);
    assert_eq!(nodes[62].depth, 5);
    assert_eq!(d.get(31, 62), 10.0);
    assert_eq!(delta_fourpoint_bruteforce(&d), 0.0);
    assert!(matches!(
        TreeSpec::new(2, 12),
        Err(EnvError::TreeTooLarge { .. })
    ));
    assert!(TreeSpec::new(1, 3).is_err());
}

#[test]
fn tree_metrics_match_floyd_warshall_and_have_zero_delta() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut cases = vec![path_tree(10).unwrap(), star_tree(9).unwrap()];
    for n in [5, 17, 40, 64] {
        cases.push(random_tree(n, 5, &mut rng).unwrap());
    }
    for d in &cases {
        let n = d.len();
        // Rebuild edges from the metric: j's parent is the nearest smaller index at tree distance.
        let mut fw = vec![f64::INFINITY; n * n];
        for i in 0..n {
            fw[i * n + i] = 0.0;
        }
        for j in 1..n {
            let p = (0..j)
                .filter(|&i| {
                    (0..j).all(|k| (d.get(k, j) - d.get(k, i) - d.get(i, j)).abs() < 1e-12)
                })
                .min_by(|&a, &b| d.get(a, j).total_cmp(&d.get(b, j)))
                .unwrap();
            fw[p * n + j] = d.get(p, j);
            fw[j * n + p] = d.get(p, j);
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    fw[i * n + j] = fw[i * n + j].min(fw[i * n + k] + fw[k * n + j]);
                }
            }
        }
        assert_eq!(d.data(), &fw[..]);
        if n <= 40 {
            assert_eq!(delta_fourpoint_bruteforce(d), 0.0);
        }
        assert_eq!(delta_maxmin(d, 0).unwrap(), 0.0);
    }
}

proptest! {
    #[test]
    fn episodes_are_bounded_and_deterministic(seed in 0u64..500, actions in prop::collection::vec(0usize..4, 1..200)) {
        let cfg = GridConfig::default();
        let run = || {
            let mut env = ProcGridEnv::generate(LevelSeed(seed), &cfg).unwrap();
            let mut stream = Vec::new();
            let mut total = 0.0;
            for &a in &actions {
                if env.is_done() {
                    break;
                }
                let st = env.step(Action::from_index(a).unwrap()).unwrap();
                total += st.reward;
                stream.push(st);
            }
            (stream, total, env.start_collectible_count())
        };
        let (s1, total, count) = run();
        let (s2, _, _) = run();
        prop_assert_eq!(s1, s2);
        prop_assert!(total.abs() <= 1.0 + 0.1 * count as f64 + 1e-12);
    }
}
