//! Seeded synthetic world: a small geography KG, wikitext articles about
//! its entities, a plain-text fact corpus and statement-judging datasets.
//!
//! Each country has a capital, a second city and two stations. The first
//! station serves the capital, the second serves the other city, and the
//! first is next to the second.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::evalharness::EvalItem;
use crate::kgstore::{TitleIndex, Triple, TripleStore};
use crate::{seeded_rng, Rng};

pub const RELATIONS: [&str; 5] = ["located_in", "contains", "capital_of", "serves", "next_to"];

const REGIONS: [&str; 3] = ["Norland", "Sudmark", "Estria"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Country,
    Capital,
    City,
    Station,
}

impl Kind {
    fn noun(self) -> &'static str {
        match self {
            Kind::Country => "country",
            Kind::Capital | Kind::City => "city",
            Kind::Station => "station",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub qid: String,
    pub name: String,
    pub kind: Kind,
    pub country: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub entities: Vec<Entity>,
    /// Triples over QIDs.
    pub triples: Vec<Triple>,
}

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr",
];
const NUCLEI: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
const CODAS: [&str; 6] = ["", "n", "r", "l", "s", "m"];

fn pseudo_word(rng: &mut Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        w.push_str(NUCLEI[rng.gen_range(0..NUCLEI.len())]);
    }
    w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
    let mut c = w.chars();
    let first = c.next().expect("nonempty").to_ascii_uppercase();
    format!("{first}{}", c.as_str())
}

/// Words that must never be drawn as entity names.
const RESERVED: [&str; 24] = [
    "is", "a", "in", "of", "the", "city", "country", "station", "capital", "located", "serves",
    "next", "to", "contains", "served", "by", "port", "see", "also", "atlas", "notes", "norland",
    "sudmark", "estria",
];

impl World {
    /// `countries` countries, four places each. QIDs start at `Q900001`.
    pub fn generate(countries: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut used: BTreeSet<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut entities = Vec::new();
        let mut push = |kind: Kind, country: usize, rng: &mut Rng, entities: &mut Vec<Entity>| {
            let name = loop {
                let w = pseudo_word(rng);
                if used.insert(w.to_lowercase()) {
                    break w;
                }
            };
            entities.push(Entity {
                qid: format!("Q{}", 900_001 + entities.len()),
                name,
                kind,
                country,
            });
        };
        for c in 0..countries {
            push(Kind::Country, c, &mut rng, &mut entities);
        }
        for c in 0..countries {
            push(Kind::Capital, c, &mut rng, &mut entities);
            push(Kind::City, c, &mut rng, &mut entities);
        }
        for c in 0..countries {
            push(Kind::Station, c, &mut rng, &mut entities);
            push(Kind::Station, c, &mut rng, &mut entities);
        }
        let mut world = World {
            entities,
            triples: Vec::new(),
        };
        world.triples = world.build_triples();
        world
    }

    pub fn countries(&self) -> usize {
        self.entities.iter().filter(|e| e.kind == Kind::Country).count()
    }

    fn country(&self, c: usize) -> &Entity {
        &self.entities[c]
    }
    fn capital(&self, c: usize) -> &Entity {
        &self.entities[self.countries() + 2 * c]
    }
    fn city(&self, c: usize) -> &Entity {
        &self.entities[self.countries() + 2 * c + 1]
    }
    fn station(&self, c: usize, j: usize) -> &Entity {
        &self.entities[3 * self.countries() + 2 * c + j]
    }

    fn build_triples(&self) -> Vec<Triple> {
        let mut out = Vec::new();
        for c in 0..self.countries() {
            let country = &self.country(c).qid;
            let places = [
                self.capital(c),
                self.city(c),
                self.station(c, 0),
                self.station(c, 1),
            ];
            for p in places {
                out.push(Triple::new(&p.qid, "located_in", country));
                out.push(Triple::new(country, "contains", &p.qid));
            }
            out.push(Triple::new(&self.capital(c).qid, "capital_of", country));
            out.push(Triple::new(&self.station(c, 0).qid, "serves", &self.capital(c).qid));
            out.push(Triple::new(&self.station(c, 1).qid, "serves", &self.city(c).qid));
            out.push(Triple::new(&self.station(c, 0).qid, "next_to", &self.station(c, 1).qid));
        }
        out
    }

    pub fn store(&self) -> TripleStore {
        let mut s = TripleStore::new();
        for t in &self.triples {
            s.insert(t);
        }
        s
    }

    /// Seeded split: triples move to the test side in shuffled order while
    /// every entity and relation keeps at least one training triple.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Vec<Triple>, Vec<Triple>) {
        let mut rng = seeded_rng(seed);
        let mut order: Vec<usize> = (0..self.triples.len()).collect();
        order.shuffle(&mut rng);
        let want = libm::round(self.triples.len() as f64 * test_fraction) as usize;
        let mut in_test = vec![false; self.triples.len()];
        let uses = |t: &Triple, name: &str| t.head == name || t.tail == name || t.relation == name;
        let mut taken = 0;
        for &i in &order {
            if taken == want {
                break;
            }
            let t = &self.triples[i];
            let still_covered = [t.head.as_str(), t.tail.as_str(), t.relation.as_str()]
                .iter()
                .all(|name| {
                    self.triples
                        .iter()
                        .enumerate()
                        .any(|(j, o)| j != i && !in_test[j] && uses(o, name))
                });
            if still_covered {
                in_test[i] = true;
                taken += 1;
            }
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (t, &x) in self.triples.iter().zip(&in_test) {
            if x {
                test.push(t.clone());
            } else {
                train.push(t.clone());
            }
        }
        (train, test)
    }

    /// Titles for every entity plus a `Name (kind)` redirect to each.
    pub fn title_index(&self) -> TitleIndex {
        let mut idx = TitleIndex::new();
        for e in &self.entities {
            idx.insert_title(&e.name, &e.qid);
            idx.insert_redirect(&format!("{} ({})", e.name, e.kind.noun()), &e.name);
        }
        idx
    }

    fn region(&self, c: usize) -> &'static str {
        REGIONS[c % REGIONS.len()]
    }

    /// Fact sentences about entity `i`; the first is the "located in" one.
    /// `None` pieces stand for the entity's own name.
    fn facts(&self, i: usize) -> Vec<Vec<Option<String>>> {
        let e = &self.entities[i];
        let c = e.country;
        let s = |t: &str| Some(t.to_string());
        let me = None;
        let country = &self.country(c).name;
        match e.kind {
            Kind::Country => vec![
                vec![me.clone(), s(&format!(" is located in {}.", self.region(c)))],
                vec![me.clone(), s(" is a country.")],
                vec![s("The capital of "), me.clone(), s(&format!(" is {}.", self.capital(c).name))],
                vec![me.clone(), s(&format!(" contains {}.", self.city(c).name))],
                vec![me.clone(), s(&format!(" contains {}.", self.station(c, 0).name))],
                vec![me, s(&format!(" contains {}.", self.station(c, 1).name))],
            ],
            Kind::Capital | Kind::City => {
                let capital = e.kind == Kind::Capital;
                let station = self.station(c, if capital { 0 } else { 1 });
                let role = if capital {
                    vec![me.clone(), s(&format!(" is the capital of {country}."))]
                } else {
                    vec![me.clone(), s(&format!(" is a port city of {country}."))]
                };
                vec![
                    vec![me.clone(), s(&format!(" is located in {country}."))],
                    vec![me.clone(), s(&format!(" is a city in {country}."))],
                    role,
                    vec![me.clone(), s(&format!(" is served by {}.", station.name))],
                    vec![s(&format!("{} serves ", station.name)), me, s(".")],
                ]
            }
            Kind::Station => {
                let first = self.station(c, 0).qid == e.qid;
                let served = if first { self.capital(c) } else { self.city(c) };
                let other = self.station(c, if first { 1 } else { 0 });
                vec![
                    vec![me.clone(), s(&format!(" is located in {country}."))],
                    vec![me.clone(), s(&format!(" is a station in {country}."))],
                    vec![me.clone(), s(&format!(" serves {}.", served.name))],
                    vec![me.clone(), s(&format!(" is next to {}.", other.name))],
                    vec![s(&format!("{} is next to ", other.name)), me, s(".")],
                ]
            }
        }
    }

    fn pick_facts(&self, i: usize, rng: &mut Rng) -> Vec<Vec<Option<String>>> {
        let mut facts = self.facts(i);
        let first = facts.remove(0);
        facts.shuffle(rng);
        let keep = rng.gen_range(2..=facts.len());
        facts.truncate(keep);
        let mut out = vec![first];
        out.extend(facts);
        out
    }

    /// Plain fact documents, `per_entity` for every entity, in entity order.
    pub fn fact_corpus(&self, per_entity: usize, rng: &mut Rng) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.entities.len() {
            for _ in 0..per_entity {
                let name = &self.entities[i].name;
                let sentences: Vec<String> = self
                    .pick_facts(i, rng)
                    .into_iter()
                    .map(|pieces| pieces.iter().map(|p| p.as_deref().unwrap_or(name)).collect())
                    .collect();
                out.push(sentences.join(" "));
            }
        }
        out
    }

    /// Wikitext articles: `per_entity` for every entity, subject mentions
    /// linked in varying forms, with templates, tags, bold markup, category
    /// links and occasional unresolvable links. Every `blank_every`-th
    /// article has no links at all (0 disables).
    pub fn wikitext_docs(&self, per_entity: usize, blank_every: usize, rng: &mut Rng) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for i in 0..self.entities.len() {
            for k in 0..per_entity {
                let doc_id = format!("{}-{k}", self.entities[i].qid);
                let n = out.len() + 1;
                let source = if blank_every > 0 && n % blank_every == 0 {
                    "Notes on the atlas.\n\n{{Stub}}\nThis page has no places.".to_string()
                } else {
                    self.article(i, rng)
                };
                out.push((doc_id, source));
            }
        }
        out
    }

    fn article(&self, i: usize, rng: &mut Rng) -> String {
        let e = &self.entities[i];
        let mut s = String::new();
        if rng.gen_bool(0.3) {
            s.push_str("{{Infobox place|name=");
            s.push_str(&e.name);
            s.push_str("}}\n");
        }
        for (n, pieces) in self.pick_facts(i, rng).into_iter().enumerate() {
            if n > 0 {
                s.push(' ');
            }
            for p in pieces {
                match p {
                    Some(text) => s.push_str(&text),
                    None => {
                        let link = match rng.gen_range(0..3) {
                            0 => format!("[[{}]]", e.name),
                            1 => format!("[[{} ({})|{}]]", e.name, e.kind.noun(), e.name),
                            _ => format!("[[{}|{}]]", e.name, e.name),
                        };
                        if n == 0 && rng.gen_bool(0.5) {
                            s.push_str("'''");
                            s.push_str(&link);
                            s.push_str("'''");
                        } else {
                            s.push_str(&link);
                        }
                    }
                }
            }
            if rng.gen_bool(0.2) {
                s.push_str("<ref name=\"atlas\" />");
            }
        }
        if rng.gen_bool(0.3) {
            s.push_str(" See also [[Atlas]].");
        }
        s.push_str("\n[[Category:Places]]");
        s
    }

    /// Balanced true/false "located in" style statements.
    pub fn truefalse_items(&self, n: usize, rng: &mut Rng) -> Vec<EvalItem> {
        let countries = self.countries();
        (0..n)
            .map(|k| {
                let gold = k % 2 == 0;
                let i = rng.gen_range(countries..self.entities.len());
                let e = &self.entities[i];
                let c = if gold {
                    e.country
                } else {
                    (e.country + rng.gen_range(1..countries)) % countries
                };
                let topic = if e.kind == Kind::Station { "generated" } else { "cities" };
                EvalItem {
                    statement: format!("{} is located in {}.", e.name, self.country(c).name),
                    gold,
                    topic: topic.to_string(),
                }
            })
            .collect()
    }

    /// `(claim, label)` pairs about which station serves which city, with a
    /// third label on every tenth record.
    pub fn fever_records(&self, n: usize, rng: &mut Rng) -> Vec<(String, String)> {
        let countries = self.countries();
        (0..n)
            .map(|k| {
                let c = rng.gen_range(0..countries);
                let j = rng.gen_range(0..2);
                let station = self.station(c, j);
                if k % 10 == 9 {
                    return (format!("{} opened in spring.", station.name), "NOT ENOUGH INFO".to_string());
                }
                let gold = k % 2 == 0;
                let served = match (j, gold) {
                    (0, true) | (1, false) => self.capital(c),
                    _ => self.city(c),
                };
                let label = if gold { "SUPPORTS" } else { "REFUTES" };
                (format!("{} serves {}.", station.name, served.name), label.to_string())
            })
            .collect()
    }
}
