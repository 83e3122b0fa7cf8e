use icl_lens::rng;
use icl_lens::taskgen::{
    extend_instance, inject_noise, letter_tasks, list_tasks, make_distinct_instance, make_instance,
    read_dump, sample_dataset, task_samplers, verify_labels, write_dump, Demo, ExtendMode,
    IclInstance, NoiseSpec, TaskSpec, Tokenizer, ARROW, LBRACKET,
};
use proptest::prelude::*;

fn tok() -> &'static Tokenizer {
    Tokenizer::standard()
}

fn task(name: &str) -> TaskSpec {
    TaskSpec::by_name(0, name).unwrap()
}

#[test]
fn letter_task_examples() {
    let next = task("next_letter");
    let t = tok();
    let demos: Vec<Demo> = ["a", "c"]
        .iter()
        .map(|x| {
            let input = vec![t.id(x).unwrap()];
            Demo {
                label: next.label(&input).unwrap(),
                input,
            }
        })
        .collect();
    let q = vec![t.id("e").unwrap()];
    let inst = IclInstance::new(0, demos, q.clone(), next.label(&q).unwrap());
    assert_eq!(t.decode(&inst.tokens).unwrap(), "a → b , c → d , e →");
    assert_eq!(t.token(inst.gold).unwrap(), "f");

    let c = vec![t.id("c").unwrap()];
    assert_eq!(
        t.token(task("copy_letter").label(&c).unwrap()).unwrap(),
        "c"
    );
    let a = vec![t.id("a").unwrap()];
    assert_eq!(t.token(task("to_upper").label(&a).unwrap()).unwrap(), "A");
    let z = vec![t.id("z").unwrap()];
    assert_eq!(t.token(next.label(&z).unwrap()).unwrap(), "a");
    assert_eq!(
        t.token(task("prev_letter").label(&a).unwrap()).unwrap(),
        "z"
    );
}

#[test]
fn list_instances_tokenize_punctuation() {
    let ids = tok().encode("[a,b,c] → a").unwrap();
    assert_eq!(ids[0], LBRACKET);
    assert_eq!(ids.len(), 9);
    assert_eq!(tok().decode(&ids).unwrap(), "[a,b,c] → a");
    let first = task("list_first");
    let input = tok().encode("[a,b,c]").unwrap();
    assert_eq!(tok().token(first.label(&input).unwrap()).unwrap(), "a");
}

#[test]
fn dataset_shapes_and_bookkeeping() {
    let tasks = letter_tasks();
    let data = sample_dataset(&tasks, 100, 15, 1, "x", 130).unwrap();
    assert_eq!(data.len(), 500);
    for (i, inst) in data.iter().enumerate() {
        assert_eq!(inst.task, tasks[i / 100].id);
        assert_eq!(inst.k(), 15);
        assert_eq!(inst.sep_positions.len(), 16);
        assert!(inst.sep_positions.iter().all(|&s| inst.tokens[s] == ARROW));
    }
    let ids: std::collections::BTreeSet<usize> = tasks.iter().map(|t| t.id).collect();
    assert_eq!(ids.len(), tasks.len());

    let zero = sample_dataset(&tasks[..1], 1, 0, 1, "z", 130).unwrap();
    assert_eq!(zero[0].tokens.len(), 2);
    assert_eq!(zero[0].sep_positions, vec![1]);
    assert!(sample_dataset(&tasks, 0, 3, 1, "x", 130).is_err());
    assert!(sample_dataset(&tasks, 1, 40, 1, "x", 130).is_err());
}

#[test]
fn dataset_is_seed_deterministic() {
    let tasks = letter_tasks();
    let a = sample_dataset(&tasks, 5, 4, 9, "s", 130).unwrap();
    assert_eq!(a, sample_dataset(&tasks, 5, 4, 9, "s", 130).unwrap());
    assert_ne!(a, sample_dataset(&tasks, 5, 4, 10, "s", 130).unwrap());
    assert_ne!(a, sample_dataset(&tasks, 5, 4, 9, "t", 130).unwrap());
}

#[test]
fn noise_examples() {
    let t = task("next_letter");
    let inst = make_instance(&t, 10, &mut rng::seeded(1), 130).unwrap();
    let same = inject_noise(
        &inst,
        &NoiseSpec::Ratio { ratio: 0.0 },
        &t,
        &mut rng::seeded(2),
    )
    .unwrap();
    assert_eq!(same, inst);
    let all = inject_noise(
        &inst,
        &NoiseSpec::Ratio { ratio: 1.0 },
        &t,
        &mut rng::seeded(2),
    )
    .unwrap();
    assert!(all
        .demos
        .iter()
        .all(|d| d.label != t.label(&d.input).unwrap()));
    assert_eq!(
        (all.query.clone(), all.gold),
        (inst.query.clone(), inst.gold)
    );
    let one = inject_noise(
        &inst,
        &NoiseSpec::Positions { positions: vec![4] },
        &t,
        &mut rng::seeded(2),
    )
    .unwrap();
    let changed: Vec<usize> = (0..10).filter(|&i| one.demos[i] != inst.demos[i]).collect();
    assert_eq!(changed, vec![4]);
    assert!(inject_noise(
        &inst,
        &NoiseSpec::Positions {
            positions: vec![10]
        },
        &t,
        &mut rng::seeded(2)
    )
    .is_err());
    assert!(inject_noise(
        &inst,
        &NoiseSpec::Ratio { ratio: 1.5 },
        &t,
        &mut rng::seeded(2)
    )
    .is_err());
}

#[test]
fn extension_examples() {
    let t = task("to_upper");
    let inst = make_distinct_instance(&t, 3, &mut rng::seeded(4), 130).unwrap();
    let rep = extend_instance(&inst, ExtendMode::Repeat, 6, &t, &mut rng::seeded(5)).unwrap();
    assert_eq!(rep.k(), 6);
    assert!(rep.demos.iter().all(|d| inst.demos.contains(d)));
    let dis = extend_instance(&inst, ExtendMode::Distinct, 6, &t, &mut rng::seeded(5)).unwrap();
    let mut inputs: Vec<_> = dis.demos.iter().map(|d| d.input.clone()).collect();
    inputs.sort();
    inputs.dedup();
    assert_eq!(inputs.len(), 6);
    assert_eq!(&dis.demos[..3], &inst.demos[..]);
    for e in [&rep, &dis] {
        assert_eq!((e.query.clone(), e.gold), (inst.query.clone(), inst.gold));
    }
    assert!(extend_instance(&inst, ExtendMode::Distinct, 27, &t, &mut rng::seeded(5)).is_err());
    assert!(extend_instance(&inst, ExtendMode::Repeat, 2, &t, &mut rng::seeded(5)).is_err());
}

#[test]
fn dump_round_trip() {
    let tasks = letter_tasks();
    let data = sample_dataset(&tasks, 3, 4, 2, "d", 130).unwrap();
    let mut buf = Vec::new();
    write_dump(&mut buf, &data).unwrap();
    let back = read_dump(buf.as_slice()).unwrap();
    assert_eq!(back, data);
    verify_labels(&back, &tasks).unwrap();
    let noisy: Vec<IclInstance> = data
        .iter()
        .map(|i| {
            inject_noise(
                i,
                &NoiseSpec::Ratio { ratio: 1.0 },
                &tasks[i.task],
                &mut rng::seeded(1),
            )
            .unwrap()
        })
        .collect();
    assert!(verify_labels(&noisy, &tasks).is_err());
}

#[test]
fn every_registered_sampler_builds() {
    for name in task_samplers().names() {
        let t = task(name);
        let mut r = rng::seeded(3);
        for _ in 0..20 {
            let x = t.sample_input(&mut r);
            assert!(t.label_domain().contains(&t.label(&x).unwrap()), "{name}");
        }
    }
    assert!(TaskSpec::by_name(0, "no_such_task").is_err());
    assert_eq!(list_tasks().len(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn instances_are_consistent(seed in 0u64..10_000, k in 0usize..12, which in 0usize..10) {
        let all: Vec<TaskSpec> = letter_tasks().into_iter().chain(list_tasks()).collect();
        let t = &all[which];
        let inst = make_instance(t, k, &mut rng::seeded(seed), 512).unwrap();
        prop_assert_eq!(inst.sep_positions.len(), k + 1);
        let rebuilt = IclInstance::new(inst.task, inst.demos.clone(), inst.query.clone(), inst.gold);
        prop_assert_eq!(&rebuilt.tokens, &inst.tokens);
        prop_assert_eq!(tok().encode(&tok().decode(&inst.tokens).unwrap()).unwrap(), inst.tokens.clone());
        prop_assert!(inst.separator_targets().iter().all(|l| t.label_domain().contains(l)));
        prop_assert_eq!(inst.gold, t.label(&inst.query).unwrap());
    }
}
