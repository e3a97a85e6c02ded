//! Seeded synthetic catalogs and interaction logs.
//!
//! Items are built from a product type, a style attribute and a brand. Each
//! user has a current-session intent (one type and style) and a long-term
//! history spread over other intents. The held-out item always matches the
//! session intent, so relevance is a function of token overlap with the
//! session.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, Interaction, Item};

const TYPES: &[(&str, [&str; 3])] = &[
    ("bags", ["tote", "handbag", "satchel"]),
    ("shoes", ["sneaker", "loafer", "sandal"]),
    ("phones", ["smartphone", "charger", "earbuds"]),
    ("kitchen", ["skillet", "kettle", "blender"]),
    ("lighting", ["lamp", "lantern", "sconce"]),
    ("outerwear", ["parka", "raincoat", "blazer"]),
    ("watches", ["chronograph", "smartwatch", "wristwatch"]),
    ("office", ["desk", "organizer", "notebook"]),
];

const STYLES: &[[&str; 2]] = &[
    ["vegan", "leather"],
    ["checkered", "plaid"],
    ["matte", "black"],
    ["floral", "print"],
    ["brushed", "steel"],
    ["waterproof", "nylon"],
    ["bamboo", "wood"],
    ["neon", "pastel"],
    ["vintage", "suede"],
    ["carbon", "fiber"],
];

const BRANDS: &[&str] = &[
    "acme", "borealis", "cobalt", "dasein", "ember", "fjord", "gala", "harbor", "ion", "juniper", "kestrel", "lumen",
];

const FILLER: &[&str] = &[
    "classic", "premium", "everyday", "durable", "lightweight", "compact", "gift", "modern", "essential", "popular",
    "bestseller", "deluxe", "original", "sturdy", "portable", "elegant",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items_per_intent: usize,
    /// Long-term history length range (inclusive).
    pub long_term: (usize, usize),
    /// Session length range (inclusive), counting the held-out item.
    pub session: (usize, usize),
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 100,
            items_per_intent: 4,
            long_term: (8, 14),
            session: (3, 5),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub catalog: Catalog,
    pub interactions: Vec<Interaction>,
}

fn intent_id(ty: usize, style: usize) -> usize {
    ty * STYLES.len() + style
}

pub fn generate(config: &SyntheticConfig) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut items = Vec::new();
    // intent -> item ids
    let mut by_intent: Vec<Vec<String>> = vec![Vec::new(); TYPES.len() * STYLES.len()];
    for (t, (category, nouns)) in TYPES.iter().enumerate() {
        for (s, style) in STYLES.iter().enumerate() {
            for n in 0..config.items_per_intent {
                let id = format!("p{:02}{:02}{:02}", t, s, n);
                let brand = BRANDS.choose(&mut rng).expect("brands");
                let noun = nouns[n % nouns.len()];
                let filler: Vec<&str> = FILLER.choose_multiple(&mut rng, 3).copied().collect();
                let item = Item::new(&id, format!("{} {} {} {}", capitalize(brand), style[0], style[1], noun))
                    .with_description(format!("{} {} {} for {category}", filler[0], filler[1], noun))
                    .with_reviews([format!("{} and {}", filler[2], FILLER.choose(&mut rng).expect("filler"))])
                    .with_category(*category);
                by_intent[intent_id(t, s)].push(id);
                items.push(item);
            }
        }
    }

    let n_intents = by_intent.len();
    let mut interactions = Vec::new();
    for u in 0..config.users {
        let user = format!("u{u:04}");
        let session_intent = rng.random_range(0..n_intents);
        let session_len = rng
            .random_range(config.session.0..=config.session.1)
            .min(config.items_per_intent);
        let mut session: Vec<String> = by_intent[session_intent].clone();
        session.shuffle(&mut rng);
        session.truncate(session_len);

        let lt_len = rng.random_range(config.long_term.0..=config.long_term.1);
        let lt_intents: Vec<usize> = (0..3)
            .map(|_| loop {
                let i = rng.random_range(0..n_intents);
                if i != session_intent {
                    break i;
                }
            })
            .collect();
        let long_term: Vec<String> = (0..lt_len)
            .map(|_| {
                let intent = *lt_intents.choose(&mut rng).expect("intents");
                by_intent[intent].choose(&mut rng).expect("items").clone()
            })
            .collect();

        let mut ts = 1_600_000_000 + rng.random_range(0..1_000_000u64);
        for id in long_term {
            ts += rng.random_range(86_400..864_000u64);
            interactions.push(Interaction::new(&user, id, ts));
        }
        ts += 864_000;
        for id in session {
            ts += rng.random_range(30..900u64);
            interactions.push(Interaction::new(&user, id, ts));
        }
    }

    SyntheticData {
        catalog: Catalog::from_items(items).expect("generated ids are unique"),
        interactions,
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn catalog_jsonl(catalog: &Catalog) -> String {
    catalog
        .items()
        .iter()
        .map(|i| serde_json::to_string(i).expect("item serializes") + "\n")
        .collect()
}

pub fn interactions_jsonl(interactions: &[Interaction]) -> String {
    interactions
        .iter()
        .map(|i| serde_json::to_string(i).expect("interaction serializes") + "\n")
        .collect()
}
