// SPDX-License-Identifier: Apache-2.0

//! Randomised invariants. Each property draws a seed and builds its inputs
//! with the crate's own generators so that failures shrink to one number.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qctl_core::analysis::{check_adequacy, probability_denotational};
use qctl_core::densem::{
    compose, denote, denote_compositional, kleene_iterates, meas_bar, LfpConfig, VacExt,
};
use qctl_core::linalg::{
    c, embed_on, hermitian_eigen, matrix_unit, max_abs_diff, ordered_tensor, CMatrix,
    KrausSet, Split, Superoperator,
};
use qctl_core::opsem::{probability, EvalOptions};
use qctl_core::random::{
    random_kraus_set, random_program, random_state, random_unitary, random_vacext, random_vacext_between,
    ProgramShape,
};
use qctl_core::synth::{reconstruct, stack_kraus, two_level_decompose, unitary_to_program, FreshNames};
use qctl_core::syntax::{parse, var, Environment, Program};
use qctl_core::wellformed::program;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Failing seeds are reported in the panic message rather than persisted.
fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn cfg() -> LfpConfig {
    LfpConfig::default()
}

fn env(s: &str) -> Environment {
    Environment::parse_list(s).unwrap()
}

fn subset<R: Rng>(rng: &mut R, names: &[&str]) -> Environment {
    Environment::from_vars(names.iter().filter(|_| rng.gen_bool(0.5)).map(|s| var(s)))
}

fn program_of(seed: u64) -> Program {
    random_program(&mut rng(seed), &ProgramShape::default())
}

fn projector(b: usize) -> CMatrix {
    matrix_unit(2, b, b)
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn pretty_printing_round_trips(seed in any::<u64>()) {
        let p = program_of(seed);
        prop_assert_eq!(parse(&p.stmt.pretty()).unwrap(), p.stmt);
    }

    #[test]
    fn both_evaluators_agree(seed in any::<u64>()) {
        let p = program_of(seed);
        let fwd = denote(&p, &cfg()).unwrap().value;
        let dense = denote_compositional(&p.input, &p.stmt, &cfg()).unwrap().value;
        prop_assert!(fwd.distance(&dense) <= 1e-9, "distance {}", fwd.distance(&dense));
    }

    #[test]
    fn denotations_are_valid(seed in any::<u64>()) {
        let p = program_of(seed);
        prop_assert!(denote(&p, &cfg()).unwrap().value.is_valid());
    }

    #[test]
    fn extension_respects_composition(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (g0, g1, g2) = (subset(&mut r, &["a", "b"]), subset(&mut r, &["a", "c"]), subset(&mut r, &["b"]));
        let a = random_vacext_between(&mut r, &g0, &g1);
        let b = random_vacext_between(&mut r, &g1, &g2);
        let lhs = compose(&b, &a).unwrap().extend();
        let rhs = b.extend().compose(&a.extend()).unwrap();
        prop_assert!(max_abs_diff(&lhs.matrix, &rhs.matrix) <= 1e-10);
    }

    #[test]
    fn extension_is_the_kraus_sum_with_vacuum_entries(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (m, n) = (1 << r.gen_range(0..3), 1 << r.gen_range(0..3));
        let count = r.gen_range(1..4);
        let tp = r.gen_bool(0.5);
        let ks = random_kraus_set(&mut r, m, n, count, tp);
        let input = Environment::from_vars(["a", "b"].iter().take(m.trailing_zeros() as usize).map(|s| var(s)));
        let output = Environment::from_vars(["c", "d"].iter().take(n.trailing_zeros() as usize).map(|s| var(s)));
        let v = VacExt::from_kraus(&ks, &input, &output).unwrap();
        let ext: Vec<CMatrix> = ks.ops.iter().zip(&ks.vacuum).map(|(k, nu)| {
            let mut e = CMatrix::zeros(n + 1, m + 1);
            e.view_mut((0, 0), (n, m)).copy_from(k);
            e[(n, m)] = *nu;
            e
        }).collect();
        let expected = Superoperator::from_kraus(&ext).unwrap();
        prop_assert!(max_abs_diff(&v.extend().matrix, &expected.matrix) <= 1e-12);
    }

    #[test]
    fn measurement_splits_into_projected_branches(seed in any::<u64>()) {
        let mut r = rng(seed);
        let input = subset(&mut r, &["a", "c"]).with(&var("b"));
        let output = subset(&mut r, &["a", "d"]);
        let d0 = random_vacext_between(&mut r, &input, &output);
        let d1 = random_vacext_between(&mut r, &input, &output);
        let q = var("b");
        let m = meas_bar(&q, &d0, &d1).unwrap();
        let p0 = embed_on(&q, &input, &projector(0)).unwrap();
        let p1 = embed_on(&q, &input, &projector(1)).unwrap();
        let rho = {
            let psi = random_state(&mut r, input.dim());
            &psi * psi.adjoint()
        };
        let expected = d0.apply(&(&p0 * &rho * &p0)) + d1.apply(&(&p1 * &rho * &p1));
        prop_assert!(max_abs_diff(&m.apply(&rho), &expected) <= 1e-12);
        prop_assert!(max_abs_diff(&m.f, &(&d0.f * &p0)) <= 1e-12);
    }

    #[test]
    fn kleene_iterates_increase(seed in any::<u64>()) {
        let mut r = rng(seed);
        let env = subset(&mut r, &["a"]).with(&var("q"));
        let body = random_vacext_between(&mut r, &env, &env);
        let its = kleene_iterates(&var("q"), &body, 6).unwrap();
        for w in its.windows(2) {
            let diff = Superoperator { matrix: &w[1].c.matrix - &w[0].c.matrix, ..w[0].c.clone() };
            prop_assert!(diff.choi_min_eigenvalue() >= -1e-10);
        }
    }

    #[test]
    fn unused_variables_factor_out(seed in any::<u64>()) {
        let p = program_of(seed);
        let z = var("z");
        let wide = program(p.input.with(&z), p.stmt.clone()).unwrap();
        let lhs = denote(&wide, &cfg()).unwrap().value;
        let rhs = denote(&p, &cfg()).unwrap().value.with_frame(&Environment::from_vars([z])).unwrap();
        prop_assert!(lhs.distance(&rhs) <= 1e-10, "distance {}", lhs.distance(&rhs));
    }

    #[test]
    fn adequacy_residual_shrinks_with_fuel(seed in any::<u64>()) {
        let p = program_of(seed);
        let psi = random_state(&mut rng(seed ^ 1), p.input.dim());
        let rs: Vec<f64> = [2, 8, 32]
            .iter()
            .map(|&f| check_adequacy(&p, &psi, f, 1e-6).unwrap().density_residual)
            .collect();
        prop_assert!(rs[1] <= rs[0] + 1e-9 && rs[2] <= rs[1] + 1e-9, "{:?}", rs);
    }

    #[test]
    fn denotational_probability_lies_in_the_bracket(seed in any::<u64>()) {
        let p = program_of(seed);
        let psi = random_state(&mut rng(seed ^ 2), p.input.dim());
        let exact = probability_denotational(&p, &psi).unwrap();
        let (lo, hi) = probability(&p, &psi, &EvalOptions::default()).unwrap();
        prop_assert!(lo - 1e-9 <= exact && exact <= hi + 1e-9, "{lo} <= {exact} <= {hi}");
    }

    #[test]
    fn ordered_tensor_is_kron_up_to_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (ea, eb) = (env("a,c"), env("b"));
        let psi = random_state(&mut r, 4);
        let phi = random_state(&mut r, 2);
        let (t, full) = ordered_tensor(&psi, &ea, &phi, &eb).unwrap();
        prop_assert_eq!(full.clone(), env("a,b,c"));
        let (t2, _) = ordered_tensor(&phi, &eb, &psi, &ea).unwrap();
        prop_assert!((&t - &t2).norm() <= 1e-15);
        // a is the most significant bit of both layouts; b and c trade places.
        let k = psi.kronecker(&phi);
        for x in 0..8usize {
            let (a, cbit, b) = ((x >> 2) & 1, (x >> 1) & 1, x & 1);
            prop_assert!((t[(a << 2) | (b << 1) | cbit] - k[x]).norm() <= 1e-15);
        }
        let (t3, _) = ordered_tensor(&phi, &env("a"), &psi, &env("b,c")).unwrap();
        prop_assert!((&t3 - phi.kronecker(&psi)).norm() <= 1e-15);
    }

    #[test]
    fn stacked_kraus_recomposes(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (m, n) = (1 << r.gen_range(0..3), 1 << r.gen_range(0..3));
        let count = r.gen_range(1..6);
        let tp = r.gen_bool(0.5);
        let ks: KrausSet = random_kraus_set(&mut r, m, n, count, tp);
        let output = Environment::from_vars(["c", "d"].iter().take(n.trailing_zeros() as usize).map(|s| var(s)));
        let st = stack_kraus(&ks, &output, &mut FreshNames::avoiding(output.iter())).unwrap();
        let sp = Split::new(&st.output, &st.ancillas).unwrap();
        let block = |i: usize| CMatrix::from_fn(n, m, |o, x| st.u[(sp.join(i, o), x)]);
        let mut f = CMatrix::zeros(n, m);
        let mut c_err: f64 = 0.0;
        for i in 0..st.psi.len() {
            f += block(i) * st.psi[i].conj();
            let target = ks.ops.get(i).cloned().unwrap_or_else(|| CMatrix::zeros(n, m));
            if ks.ops.len() > 1 {
                c_err = c_err.max(max_abs_diff(&block(i), &target));
            }
        }
        prop_assert!(c_err <= 1e-9);
        prop_assert!(max_abs_diff(&f, &ks.vacuum_transform()) <= 1e-9);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn two_level_factors_reconstruct(seed in any::<u64>(), k in 1u32..4) {
        let d = 1usize << k;
        let u = random_unitary(&mut rng(seed), d);
        let fs = two_level_decompose(&u).unwrap();
        prop_assert!(max_abs_diff(&reconstruct(&fs, d), &u) <= 1e-10);
    }

    #[test]
    fn three_qubit_unitaries_synthesise(seed in any::<u64>()) {
        let e = env("a,b,c");
        let u = random_unitary(&mut rng(seed), 8);
        let s = unitary_to_program(&u, &e).unwrap();
        let d = denote(&program(e.clone(), s).unwrap(), &cfg()).unwrap().value;
        prop_assert!(max_abs_diff(&d.f, &u) <= 1e-8);
        prop_assert!(d.distance(&VacExt::from_unitary(&u, &e).unwrap()) <= 1e-8);
    }

    #[test]
    fn hermitian_eigen_reconstructs_sparse_input(seed in any::<u64>(), n in 1usize..24) {
        let mut r = rng(seed);
        let mut h = CMatrix::zeros(n, n);
        for _ in 0..n {
            let (i, j) = (r.gen_range(0..n), r.gen_range(0..n));
            let z = if i == j { c(r.gen_range(-1.0..1.0), 0.0) } else { c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)) };
            h[(i, j)] += z;
            if i != j {
                h[(j, i)] += z.conj();
            }
        }
        let (vals, vecs) = hermitian_eigen(&h);
        prop_assert!(vals.iter().all(|x| x.is_finite()));
        let diag = CMatrix::from_fn(n, n, |i, j| if i == j { c(vals[i], 0.0) } else { c(0.0, 0.0) });
        let err = max_abs_diff(&(&vecs * diag * vecs.adjoint()), &h);
        prop_assert!(err <= 1e-10, "reconstruction error {err:e}, eigenvalues {vals:?}");
    }

    #[test]
    fn random_pairs_are_valid(seed in any::<u64>()) {
        prop_assert!(random_vacext(&mut rng(seed)).is_valid());
    }
}


