#![allow(dead_code)]

use arag_core::blackboard::Clock;
use arag_core::corpus::{build_contexts, eval_instances, Catalog, EvalInstance, Item, UserContext};
use arag_core::embed::{HashedBagOfTokens, VectorIndex};
use arag_core::eval::{EvalConfig, Experiment, Harness};
use arag_core::llm::ChatBackend;
use arag_core::pipeline::PipelineConfig;
use arag_core::prompts::PromptSet;
use arag_core::synthetic::{generate, SyntheticConfig};

pub const FROZEN: Clock = Clock::Frozen(1_700_000_000_000);

pub struct Fixture {
    pub catalog: Catalog,
    pub index: VectorIndex,
    pub embedder: HashedBagOfTokens,
    pub prompts: PromptSet,
    pub instances: Vec<EvalInstance>,
}

impl Fixture {
    pub fn synthetic(users: usize, seed: u64) -> Self {
        let data = generate(&SyntheticConfig {
            users,
            seed,
            ..SyntheticConfig::default()
        });
        let contexts = build_contexts(&data.interactions, &data.catalog, 3600).unwrap();
        let embedder = HashedBagOfTokens::default();
        let index = VectorIndex::build(&embedder, &data.catalog, 3).unwrap();
        Fixture {
            instances: eval_instances(&contexts),
            catalog: data.catalog,
            index,
            embedder,
            prompts: PromptSet::default(),
        }
    }

    pub fn run(&self, backend: &dyn ChatBackend, pipeline: &PipelineConfig, eval: &EvalConfig) -> Experiment {
        Harness {
            catalog: &self.catalog,
            index: &self.index,
            embedder: &self.embedder,
            backend,
            prompts: &self.prompts,
            pipeline,
            eval,
            clock: FROZEN,
        }
        .run_experiment(&self.instances)
        .unwrap()
    }

    pub fn context(&self, n: usize) -> &UserContext {
        &self.instances[n].context
    }
}

/// A small hand-written catalog in the shape of a clothing store.
pub fn tote_catalog() -> Catalog {
    Catalog::from_items([
        Item::new("B01", "BUTIED Checkered Tote Bag").with_description("checkered canvas tote, vegan leather handles"),
        Item::new("B02", "Plaid Shoulder Tote").with_description("plaid pattern tote bag"),
        Item::new("B03", "Vegan Leather Crossbody").with_description("vegan leather crossbody bag"),
        Item::new("B04", "Checkered Makeup Pouch").with_description("checkered cosmetic pouch"),
        Item::new("S01", "Running Sneaker").with_description("lightweight running shoe"),
        Item::new("S02", "Trail Sneaker").with_description("grip running shoe for trails"),
        Item::new("K01", "Cast Iron Skillet").with_description("pre-seasoned skillet"),
        Item::new("K02", "Electric Kettle").with_description("fast boil kettle"),
        Item::new("W01", "Steel Chronograph").with_description("brushed steel watch"),
        Item::new("L01", "Bamboo Desk Lamp").with_description("bamboo wood lamp"),
    ])
    .unwrap()
}
