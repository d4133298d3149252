//! Deterministic stand-in for a chat LLM.
//!
//! Answers are composed from per-category word pools and a small scene
//! table. Categories outside the table get synthetic pools and scenes
//! derived from a hash of their name, so any category set works offline.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::client::LlmClient;
use super::questions::{QuestionTemplate, Slots};
use crate::error::{Error, Result};

struct Known {
    name: &'static str,
    coarse: &'static str,
    fine: &'static str,
    lexicon: &'static [&'static str],
}

const KNOWN: &[Known] = &[
    Known { name: "knife", coarse: "kitchen", fine: "cutlery", lexicon: &["blade", "sharp", "serrated", "slicing", "steel", "edge", "carving"] },
    Known { name: "fork", coarse: "kitchen", fine: "cutlery", lexicon: &["prongs", "tines", "pierce", "twirl", "silverware", "dinner", "pronged"] },
    Known { name: "spoon", coarse: "kitchen", fine: "cutlery", lexicon: &["stir", "soup", "curved", "dessert", "teaspoon", "rounded", "scoop"] },
    Known { name: "oven", coarse: "kitchen", fine: "appliance", lexicon: &["bake", "rack", "preheat", "tray", "roast", "convection", "baking"] },
    Known { name: "microwave", coarse: "kitchen", fine: "appliance", lexicon: &["reheat", "beep", "turntable", "popcorn", "defrost", "timer", "radiation"] },
    Known { name: "refrigerator", coarse: "kitchen", fine: "appliance", lexicon: &["chill", "freezer", "cold", "magnets", "ice", "fridge", "cooling"] },
    Known { name: "toaster", coarse: "kitchen", fine: "appliance", lexicon: &["toast", "crumbs", "slots", "lever", "browned", "pop", "bread"] },
    Known { name: "sofa", coarse: "living room", fine: "furniture", lexicon: &["upholstered", "reclining", "armrest", "lounge", "seating", "plush", "velvet"] },
    Known { name: "chair", coarse: "living room", fine: "furniture", lexicon: &["legs", "backrest", "seat", "wooden", "stackable", "sitting", "rocking"] },
    Known { name: "tv", coarse: "living room", fine: "electronics", lexicon: &["screen", "channel", "broadcast", "pixels", "antenna", "streaming", "flatscreen"] },
    Known { name: "laptop", coarse: "living room", fine: "electronics", lexicon: &["keyboard", "trackpad", "battery", "portable", "hinge", "typing", "charger"] },
    Known { name: "remote", coarse: "living room", fine: "electronics", lexicon: &["buttons", "infrared", "clicker", "handheld", "volume", "pointing", "mute"] },
    Known { name: "book", coarse: "living room", fine: "reading", lexicon: &["pages", "chapters", "novel", "paperback", "reading", "spine", "author"] },
    Known { name: "car", coarse: "street", fine: "vehicle", lexicon: &["sedan", "wheels", "engine", "driver", "headlights", "bumper", "parked"] },
    Known { name: "bus", coarse: "street", fine: "vehicle", lexicon: &["passengers", "route", "fare", "coach", "commuters", "depot", "transit"] },
    Known { name: "truck", coarse: "street", fine: "vehicle", lexicon: &["cargo", "freight", "trailer", "diesel", "haul", "loading", "pickup"] },
    Known { name: "bicycle", coarse: "street", fine: "vehicle", lexicon: &["pedals", "spokes", "chain", "saddle", "cyclist", "gears", "helmet"] },
    Known { name: "traffic light", coarse: "street", fine: "signage", lexicon: &["signal", "amber", "stoplight", "glowing", "blinking", "pole", "junction"] },
    Known { name: "stop sign", coarse: "street", fine: "signage", lexicon: &["octagonal", "halt", "reflective", "warning", "lettering", "post", "yield"] },
    Known { name: "horse", coarse: "farm", fine: "livestock", lexicon: &["mane", "hooves", "gallop", "stallion", "neigh", "bridle", "rider"] },
    Known { name: "cow", coarse: "farm", fine: "livestock", lexicon: &["milk", "moo", "udder", "grazing", "calf", "dairy", "cattle"] },
    Known { name: "sheep", coarse: "farm", fine: "livestock", lexicon: &["wool", "lamb", "flock", "fleece", "baa", "shearing", "ewe"] },
    Known { name: "dog", coarse: "farm", fine: "pets", lexicon: &["fur", "bark", "tail", "paws", "leash", "puppy", "fetch"] },
    Known { name: "cat", coarse: "farm", fine: "pets", lexicon: &["whiskers", "purr", "meow", "kitten", "claws", "feline", "litter"] },
];

const SCENES: &[(&str, &[&str])] = &[
    ("kitchen", &["counter", "sink", "cupboard", "drawer", "pantry", "tiles", "stovetop", "apron"]),
    ("living room", &["carpet", "lamp", "window", "shelf", "curtain", "cushion", "fireplace", "rug"]),
    ("street", &["road", "sidewalk", "crosswalk", "curb", "lane", "intersection", "pavement", "corner"]),
    ("farm", &["field", "barn", "fence", "pasture", "meadow", "hay", "stable", "grass"]),
];

const GENERIC: &[&str] = &[
    "color", "shape", "size", "texture", "material", "pattern", "surface", "weight", "edge",
    "sound", "smell", "temperature", "age", "condition", "brightness", "price", "origin", "brand",
    "style", "durability", "flexibility", "hardness", "transparency", "function", "location",
    "speed", "capacity", "height", "width", "length", "thickness", "density", "shine", "softness",
    "cleanliness", "design", "purpose", "popularity", "ownership", "value",
];

/// Generic attributes the filter question keeps for every category.
const RELEVANT_GENERIC: &[&str] = &["color", "shape", "size", "texture", "material", "pattern", "surface"];

const FILLER: &[&str] = &[
    "small", "large", "old", "new", "bright", "dark", "shiny", "plain", "heavy", "light", "clean",
    "dusty",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tus", "vor", "bel", "dan", "fi", "gor", "hu", "jen", "pra", "sel",
    "tin", "zor", "qua", "mel", "nix", "ost",
];

const LEXICON_LEN: usize = 40;
const SYNTHETIC_SCENES: usize = 4;

const DESCRIBE_TEMPLATES: &[&str] = &[
    "the {c} has a {w1} {a} and a {f} {w2}",
    "this {f} {c} is known for its {w1} {a}",
    "you can tell a {c} by the {w1} and {w2} {a}",
    "a {c} often shows {f} {a} with {w1} details",
    "look at the {w1} {a} of the {c} near the {w2}",
    "the {a} of a {c} is {f} and {w1}",
    "every {c} we saw had {w1} {w2} and a {f} {a}",
    "my {c} looks {f} because of its {w1} {a}",
];

const SCENE_TEMPLATES: &[&str] = &[
    "in the {s1} a {c1} sits beside a {c2} near the {s2}",
    "there is a {w1} {c1} and a {c2} on the {s1}",
    "a {f} {s1} with a {c2} next to the {c1}",
    "someone left the {c1} by the {w2} {c2} close to the {s2}",
    "the {c2} and the {c1} share the {f} {s1}",
    "we found a {c1} under the {s1} and a {c2} by the {s2}",
    "a {w1} {c1} beside a {w2} {c2} in the {s1}",
];

/// Seeded mock LLM. Identical `(question, seed)` always yields the same answer.
#[derive(Debug, Clone)]
pub struct MockLlm {
    seed: u64,
}

struct Profile {
    coarse: String,
    fine: String,
    lexicon: Vec<String>,
    scene_words: Vec<String>,
}

impl MockLlm {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn rng_for(&self, parts: &[&str]) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        for p in parts {
            hasher.update(p.as_bytes());
            hasher.update([0u8]);
        }
        ChaCha8Rng::from_seed(hasher.finalize().into())
    }

    fn pseudo_words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
        (0..n)
            .map(|_| {
                let k = rng.random_range(2..=3);
                (0..k).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect()
            })
            .collect()
    }

    fn profile(&self, name: &str) -> Profile {
        let key = name.trim().to_lowercase();
        if let Some(known) = KNOWN.iter().find(|k| k.name == key) {
            let mut lexicon: Vec<String> = known.lexicon.iter().map(|s| s.to_string()).collect();
            let mut rng = self.rng_for(&["lexicon", &key]);
            lexicon.extend(Self::pseudo_words(&mut rng, LEXICON_LEN - lexicon.len()));
            let scene_words = SCENES
                .iter()
                .find(|(s, _)| *s == known.coarse)
                .map(|(_, w)| w.iter().map(|s| s.to_string()).collect())
                .unwrap_or_default();
            return Profile {
                coarse: known.coarse.to_string(),
                fine: format!("{} {}", known.coarse, known.fine),
                lexicon,
                scene_words,
            };
        }
        // Group assignment depends on the name only, so it is seed-stable.
        let digest = Sha256::digest(key.as_bytes());
        let scene = digest[0] as usize % SYNTHETIC_SCENES;
        let sub = digest[1] as usize % 2;
        let mut rng = self.rng_for(&["lexicon", &key]);
        let lexicon = Self::pseudo_words(&mut rng, LEXICON_LEN);
        let mut scene_rng = self.rng_for(&["scene", &scene.to_string()]);
        Profile {
            coarse: format!("scene {}", scene + 1),
            fine: format!("scene {} part {}", scene + 1, sub + 1),
            lexicon,
            scene_words: Self::pseudo_words(&mut scene_rng, 8),
        }
    }

    fn is_relevant(profile: &Profile, attribute: &str) -> bool {
        let a = attribute.trim().to_lowercase();
        RELEVANT_GENERIC.contains(&a.as_str()) || profile.lexicon.contains(&a)
    }

    fn answer(&self, question: &str) -> Result<String> {
        let (template, slots) = QuestionTemplate::detect(question)
            .ok_or_else(|| Error::Client(format!("mock cannot parse question: {question}")))?;
        let mut rng = self.rng_for(&["answer", question]);
        let count = |slots: &Slots| -> usize {
            slots
                .get("count")
                .and_then(|c| c.trim().parse().ok())
                .unwrap_or(10)
        };
        let items: Vec<String> = match template {
            QuestionTemplate::CommonAttributes => {
                let mut pool: Vec<String> = GENERIC.iter().map(|s| s.to_string()).collect();
                pool.shuffle(&mut rng);
                pool.truncate(count(&slots));
                pool
            }
            QuestionTemplate::SpecificAttributes => {
                let mut lexicon = self.profile(&slots["category"]).lexicon;
                lexicon.truncate(count(&slots));
                lexicon
            }
            QuestionTemplate::Filter => {
                let profile = self.profile(&slots["category"]);
                slots["attribute_list"]
                    .split(',')
                    .map(str::trim)
                    .filter(|a| Self::is_relevant(&profile, a))
                    .take(count(&slots))
                    .map(str::to_string)
                    .collect()
            }
            QuestionTemplate::Describe => {
                let category = slots["category"].trim().to_lowercase();
                let attribute = slots["attribute"].trim().to_lowercase();
                let profile = self.profile(&category);
                let words: Vec<String> = if Self::is_relevant(&profile, &attribute) {
                    profile.lexicon[..12].to_vec()
                } else {
                    // Noisy attribute: borrow vocabulary from unrelated categories.
                    KNOWN.iter().flat_map(|k| k.lexicon.iter().map(|s| s.to_string())).collect()
                };
                (0..count(&slots))
                    .map(|_| {
                        let t = *DESCRIBE_TEMPLATES.choose(&mut rng).expect("non-empty");
                        t.replace("{c}", &category)
                            .replace("{a}", &attribute)
                            .replace("{w1}", words.choose(&mut rng).expect("non-empty"))
                            .replace("{w2}", words.choose(&mut rng).expect("non-empty"))
                            .replace("{f}", FILLER.choose(&mut rng).expect("non-empty"))
                    })
                    .collect()
            }
            QuestionTemplate::Partition => {
                let names: Vec<&str> = slots["category_list"]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .collect();
                let profiles: Vec<Profile> = names.iter().map(|n| self.profile(n)).collect();
                let single_scene = profiles.windows(2).all(|w| w[0].coarse == w[1].coarse);
                let mut groups: Vec<(String, Vec<&str>)> = Vec::new();
                for (name, p) in names.iter().zip(&profiles) {
                    let label = if single_scene { &p.fine } else { &p.coarse };
                    match groups.iter_mut().find(|(l, _)| l == label) {
                        Some((_, members)) => members.push(name),
                        None => groups.push((label.clone(), vec![name])),
                    }
                }
                groups
                    .into_iter()
                    .map(|(label, members)| format!("{label}: {}", members.join(", ")))
                    .collect()
            }
            QuestionTemplate::Scene => {
                let c1 = slots["category1"].trim().to_lowercase();
                let c2 = slots["category2"].trim().to_lowercase();
                let p1 = self.profile(&c1);
                let p2 = self.profile(&c2);
                (0..count(&slots))
                    .map(|_| {
                        let t = *SCENE_TEMPLATES.choose(&mut rng).expect("non-empty");
                        t.replace("{c1}", &c1)
                            .replace("{c2}", &c2)
                            .replace("{s1}", p1.scene_words.choose(&mut rng).expect("non-empty"))
                            .replace("{s2}", p1.scene_words.choose(&mut rng).expect("non-empty"))
                            .replace("{w1}", p1.lexicon[..12].choose(&mut rng).expect("non-empty"))
                            .replace("{w2}", p2.lexicon[..12].choose(&mut rng).expect("non-empty"))
                            .replace("{f}", FILLER.choose(&mut rng).expect("non-empty"))
                    })
                    .collect()
            }
        };
        Ok(items
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {s}", i + 1))
            .collect::<Vec<_>>()
            .join("\n"))
    }
}

impl LlmClient for MockLlm {
    fn ask(&self, question: &str) -> Result<String> {
        self.answer(question)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{parse_list_answer, parse_partition_answer, render_question};

    fn q(t: QuestionTemplate, pairs: &[(&str, &str)]) -> String {
        let slots: Slots = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        render_question(t, &slots).unwrap()
    }

    #[test]
    fn byte_identical_answers() {
        let question = q(
            QuestionTemplate::Describe,
            &[("category", "dog"), ("attribute", "color"), ("count", "20")],
        );
        let a = MockLlm::new(7).ask(&question).unwrap();
        let b = MockLlm::new(7).ask(&question).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, MockLlm::new(8).ask(&question).unwrap());
        assert_eq!(parse_list_answer(&a).unwrap().len(), 20);
    }

    #[test]
    fn partition_kitchen_and_living_room() {
        let question = q(QuestionTemplate::Partition, &[("category_list", "knife, oven, sofa, book")]);
        let groups = parse_partition_answer(&MockLlm::new(1).ask(&question).unwrap()).unwrap();
        assert_eq!(groups, vec![vec!["knife", "oven"], vec!["sofa", "book"]]);

        let question = q(QuestionTemplate::Partition, &[("category_list", "knife, fork, oven")]);
        let groups = parse_partition_answer(&MockLlm::new(1).ask(&question).unwrap()).unwrap();
        assert_eq!(groups, vec![vec!["knife", "fork"], vec!["oven"]]);
    }

    #[test]
    fn unknown_question_is_a_client_error() {
        assert!(matches!(MockLlm::new(0).ask("what is the weather"), Err(Error::Client(_))));
    }
}
