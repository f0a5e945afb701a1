//! Deterministic toy corpora shared by the integration tests.
#![allow(dead_code)]

use imag_core::dataset::{Sample, Triple, TripleSet};

pub const NAMES: [&str; 32] = [
    "ada", "bram", "cleo", "dov", "elin", "finn", "gia", "hugo", "ines", "jorn", "kaia", "lev", "mira", "nico",
    "oona", "piet", "quin", "rosa", "sven", "tova", "ugo", "vera", "wim", "xena", "yuri", "zora", "arlo",
    "bea", "cato", "dana", "emil", "fay",
];
pub const CITIES: [&str; 8] = ["paris", "rome", "oslo", "lima", "kyiv", "bern", "doha", "riga"];
pub const JOBS: [&str; 8] = ["pilot", "chef", "nurse", "judge", "baker", "poet", "tailor", "diver"];
pub const FOODS: [&str; 4] = ["figs", "rice", "soup", "plums"];

fn triple(h: &str, r: &str, t: &str) -> Triple {
    Triple::new(h, r, t).unwrap()
}

fn sample(id: String, triples: Vec<Triple>, text: &str) -> Sample {
    Sample::new(&id, TripleSet::new(triples).unwrap(), Some(text))
}

/// 32 two-triple pairs with one fixed sentence template.
pub fn overfit_corpus() -> Vec<Sample> {
    NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let city = CITIES[i % 8];
            let job = JOBS[(i / 8 + i) % 8];
            sample(
                format!("o{i}"),
                vec![triple(name, "birth_place", city), triple(name, "occupation", job)],
                &format!("{name} was born in {city} and works as a {job} ."),
            )
        })
        .collect()
}

/// Facts about person `i` of the memory corpus.
pub fn person_facts(i: usize) -> (&'static str, &'static str, &'static str, &'static str) {
    (NAMES[i], CITIES[i % 8], JOBS[(3 * i + 1) % 8], FOODS[(i / 2) % 4])
}

pub fn person_text(i: usize) -> String {
    let (name, city, job, food) = person_facts(i);
    format!("{name} was born in {city} . {name} works as a {job} . {name} likes {food} .")
}

/// Three-triple sets whose text always mentions all three facts, so a
/// subsampled input forces the text of dropped facts to come from memory.
pub fn memory_corpus(people: usize) -> Vec<Sample> {
    (0..people)
        .map(|i| {
            let (name, city, job, food) = person_facts(i);
            sample(
                format!("m{i}"),
                vec![
                    triple(name, "birth_place", city),
                    triple(name, "occupation", job),
                    triple(name, "likes", food),
                ],
                &person_text(i),
            )
        })
        .collect()
}

/// One-triple probe inputs: only the birth place of each person.
pub fn memory_probes(people: usize) -> Vec<TripleSet> {
    (0..people)
        .map(|i| {
            let (name, city, _, _) = person_facts(i);
            TripleSet::new(vec![triple(name, "birth_place", city)]).unwrap()
        })
        .collect()
}

/// One-triple samples for each fact of the memory corpus.
pub fn memory_one_triple(people: usize) -> Vec<Sample> {
    let mut out = Vec::new();
    for i in 0..people {
        let (name, city, job, food) = person_facts(i);
        out.push(sample(format!("b{i}"), vec![triple(name, "birth_place", city)], &format!("{name} was born in {city} .")));
        out.push(sample(format!("j{i}"), vec![triple(name, "occupation", job)], &format!("{name} works as a {job} .")));
        out.push(sample(format!("f{i}"), vec![triple(name, "likes", food)], &format!("{name} likes {food} .")));
    }
    out
}

pub const PETS: [&str; 4] = ["cat", "dog", "owl", "fox"];

/// Number of facts known about person `i` (two to four).
pub fn fact_count(i: usize) -> usize {
    2 + (i * 7 / 3) % 3
}

/// The facts of person `i` as (relation, tail, sentence) in a fixed order.
pub fn facts(i: usize) -> Vec<(&'static str, &'static str, String)> {
    let (name, city, job, food) = person_facts(i);
    let pet = PETS[(i * 5 / 2) % 4];
    let all = vec![
        ("birth_place", city, format!("{name} was born in {city} .")),
        ("occupation", job, format!("{name} works as a {job} .")),
        ("likes", food, format!("{name} likes {food} .")),
        ("pet", pet, format!("{name} owns a {pet} .")),
    ];
    all.into_iter().take(fact_count(i)).collect()
}

/// Like [`memory_corpus`] but people differ in how much is known about them,
/// so text length depends on knowledge the input may not show.
pub fn varied_corpus(people: usize) -> Vec<Sample> {
    (0..people)
        .map(|i| {
            let name = NAMES[i];
            let fs = facts(i);
            let triples = fs.iter().map(|(r, t, _)| triple(name, r, t)).collect();
            let text: Vec<&str> = fs.iter().map(|(_, _, s)| s.as_str()).collect();
            sample(format!("v{i}"), triples, &text.join(" "))
        })
        .collect()
}

fn mix(i: usize, salt: usize) -> usize {
    let mut x = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (salt as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 31;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    (x ^ (x >> 29)) as usize
}

/// Two-word name of person `i`; each word is shared by many people, so
/// only the pair identifies someone.
pub fn two_word_name(i: usize) -> String {
    format!("{} {}", NAMES[i % 8], NAMES[8 + (i / 8) % 8])
}

/// Facts of a two-word-name person as (relation, tail, sentence).
pub fn pair_facts(i: usize) -> Vec<(&'static str, &'static str, String)> {
    let name = two_word_name(i);
    let city = CITIES[mix(i, 1) % 8];
    let job = JOBS[mix(i, 2) % 8];
    let food = FOODS[mix(i, 3) % 4];
    let pet = PETS[mix(i, 4) % 4];
    let all = vec![
        ("birth_place", city, format!("{name} was born in {city} .")),
        ("occupation", job, format!("{name} works as a {job} .")),
        ("likes", food, format!("{name} likes {food} .")),
        ("pet", pet, format!("{name} owns a {pet} .")),
    ];
    all.into_iter().take(1 + mix(i, 5) % 4).collect()
}

pub fn pair_corpus(people: usize) -> Vec<Sample> {
    (0..people)
        .map(|i| {
            let name = two_word_name(i);
            let fs = pair_facts(i);
            let triples = fs.iter().map(|(r, t, _)| triple(&name, r, t)).collect();
            let text: Vec<&str> = fs.iter().map(|(_, _, s)| s.as_str()).collect();
            sample(format!("q{i}"), triples, &text.join(" "))
        })
        .collect()
}

pub fn pair_probes(people: usize) -> Vec<TripleSet> {
    (0..people)
        .map(|i| {
            let (r, t, _) = &pair_facts(i)[0];
            TripleSet::new(vec![triple(&two_word_name(i), r, t)]).unwrap()
        })
        .collect()
}
