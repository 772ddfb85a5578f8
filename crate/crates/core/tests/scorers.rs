use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanattn::gradcheck::relative_error;
use spanattn::params::{Binder, ParamId, ParamStore};
use spanattn::scorers::*;
use spanattn::tensor_core::{Graph, Tensor};

const QD: usize = 5;
const KD: usize = 6;

fn rand_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn build(kind: ScorerKind, seed: u64) -> (ParamStore, Scorer) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let s = Scorer::new(kind, &mut store, "s", &TaScoreConfig::default(), QD, KD, &mut rng).unwrap();
    (store, s)
}

fn scores(s: &Scorer, store: &ParamStore, q: &Tensor, k: &Tensor) -> Vec<f64> {
    let mut g = Graph::inference();
    let mut b = Binder::new(store);
    let (q, k) = (g.constant(q.clone()), g.constant(k.clone()));
    let out = s.score(&mut g, store, &mut b, q, k).unwrap();
    g.value(out).data().to_vec()
}

/// `sum(c * S(q, K))` and, when requested, its gradient accumulated into the store.
fn weighted_loss(s: &Scorer, store: &mut ParamStore, q: &Tensor, k: &Tensor, c: &[f64], backward: bool) -> f64 {
    let mut g = Graph::inference();
    let mut b = Binder::new(store);
    let (qv, kv) = (g.constant(q.clone()), g.constant(k.clone()));
    let out = s.score(&mut g, store, &mut b, qv, kv).unwrap();
    let cv = g.constant(Tensor::vector(c.to_vec()));
    let prod = g.mul(out, cv).unwrap();
    let loss = g.sum(prod);
    let value = g.value(loss).item();
    if backward {
        g.backward(loss).unwrap();
        store.zero_grad();
        b.accumulate(&g, store, 1.0);
    }
    value
}

#[test]
fn output_shapes_for_short_and_maximal_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in [ScorerKind::Additive, ScorerKind::Tascore] {
        let (store, s) = build(kind, 2);
        for l in [1, 5, 256] {
            let out = scores(&s, &store, &rand_matrix(1, QD, &mut rng), &rand_matrix(l, KD, &mut rng));
            assert_eq!(out.len(), l, "{kind} l={l}");
            assert!(out.iter().all(|x| x.is_finite()));
        }
    }
}

#[test]
fn tascore_rejects_more_keys_than_max_len() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (store, s) = build(ScorerKind::Tascore, 4);
    let mut g = Graph::inference();
    let mut b = Binder::new(&store);
    let q = g.constant(rand_matrix(1, QD, &mut rng));
    let k = g.constant(rand_matrix(257, KD, &mut rng));
    assert!(s.score(&mut g, &store, &mut b, q, k).is_err());
}

#[test]
fn scoring_is_deterministic_and_construction_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = rand_matrix(1, QD, &mut rng);
    let k = rand_matrix(7, KD, &mut rng);
    for kind in [ScorerKind::Additive, ScorerKind::Tascore] {
        let (s1, a) = build(kind, 9);
        let (s2, b) = build(kind, 9);
        let x = scores(&a, &s1, &q, &k);
        assert_eq!(x, scores(&a, &s1, &q, &k));
        assert_eq!(x, scores(&b, &s2, &q, &k));
        let (s3, c) = build(kind, 10);
        assert_ne!(x, scores(&c, &s3, &q, &k));
    }
}

#[test]
fn additive_scores_are_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (store, s) = build(ScorerKind::Additive, 7);
    let q = rand_matrix(1, QD, &mut rng);
    let k = rand_matrix(6, KD, &mut rng);
    let perm = [3, 0, 5, 1, 4, 2];
    let kp: Vec<f64> = perm.iter().flat_map(|&i| k.row_slice(i).to_vec()).collect();
    let kp = Tensor::matrix(6, KD, kp).unwrap();
    let a = scores(&s, &store, &q, &k);
    let b = scores(&s, &store, &q, &kp);
    for (j, &i) in perm.iter().enumerate() {
        assert!((b[j] - a[i]).abs() < 1e-14);
    }
}

#[test]
fn tascore_scores_depend_on_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (store, s) = build(ScorerKind::Tascore, 9);
    let q = rand_matrix(1, QD, &mut rng);
    let k = rand_matrix(6, KD, &mut rng);
    let perm = [3, 0, 5, 1, 4, 2];
    let kp: Vec<f64> = perm.iter().flat_map(|&i| k.row_slice(i).to_vec()).collect();
    let kp = Tensor::matrix(6, KD, kp).unwrap();
    let a = scores(&s, &store, &q, &k);
    let b = scores(&s, &store, &q, &kp);
    let worst = perm.iter().enumerate().map(|(j, &i)| (b[j] - a[i]).abs()).fold(0.0, f64::max);
    assert!(worst > 1e-6, "permuting keys only permuted the scores");
}

#[test]
fn every_tascore_parameter_group_receives_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut store, s) = build(ScorerKind::Tascore, 11);
    let Scorer::Tascore(ta) = &s else { unreachable!() };
    let groups = ta.groups();
    let q = rand_matrix(1, QD, &mut rng);
    let k = rand_matrix(8, KD, &mut rng);
    let mean = vec![1.0 / 8.0; 8];
    weighted_loss(&s, &mut store, &q, &k, &mean, true);
    let norm = |ids: &[ParamId]| -> f64 {
        ids.iter().flat_map(|&id| store.get(id).grad.iter()).map(|g| g * g).sum::<f64>().sqrt()
    };
    assert!(norm(&groups.query_linear) > 0.0, "query projection");
    assert!(norm(&groups.key_linear) > 0.0, "key projection");
    assert!(norm(&[groups.separator]) > 0.0, "separator");
    assert!(norm(&groups.encoder) > 0.0, "encoder");
    assert!(norm(&groups.head) > 0.0, "head");
}

#[test]
fn every_additive_parameter_receives_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut store, s) = build(ScorerKind::Additive, 13);
    let q = rand_matrix(1, QD, &mut rng);
    let k = rand_matrix(4, KD, &mut rng);
    weighted_loss(&s, &mut store, &q, &k, &[0.25; 4], true);
    for p in store.iter() {
        assert!(p.grad.iter().any(|&g| g != 0.0), "{}", p.name);
    }
}

fn check_fd(kind: ScorerKind, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut store, s) = build(kind, seed + 1);
    let l = 4;
    let q = rand_matrix(1, QD, &mut rng);
    let k = rand_matrix(l, KD, &mut rng);
    let c: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
    weighted_loss(&s, &mut store, &q, &k, &c, true);
    let analytic = store.flat_grads();
    let base = store.flat_values();
    let n = base.len();
    let coords: Vec<usize> = (0..200.min(n)).map(|_| rng.random_range(0..n)).collect();
    let h = 1e-6;
    let mut numeric = Vec::new();
    let mut picked = Vec::new();
    for &i in &coords {
        let mut x = base.clone();
        x[i] = base[i] + h;
        store.set_flat_values(&x);
        let fp = weighted_loss(&s, &mut store, &q, &k, &c, false);
        x[i] = base[i] - h;
        store.set_flat_values(&x);
        let fm = weighted_loss(&s, &mut store, &q, &k, &c, false);
        numeric.push((fp - fm) / (2.0 * h));
        picked.push(analytic[i]);
    }
    store.set_flat_values(&base);
    let err = relative_error(&picked, &numeric, 1e-8);
    assert!(err <= 1e-4, "{kind}: relative error {err}");
}

#[test]
fn additive_gradients_match_finite_differences() {
    for seed in 0..5 {
        check_fd(ScorerKind::Additive, 100 + seed);
    }
}

#[test]
fn tascore_gradients_match_finite_differences() {
    for seed in 0..5 {
        check_fd(ScorerKind::Tascore, 200 + seed);
    }
}
