mod common;

use arag_core::agents::{AgentSettings, Agents, NliJudgement, UserSummary, PARSE_FAILURE};
use arag_core::blackboard::{Blackboard, Role};
use arag_core::corpus::{Catalog, Interaction, Item, UserContext};
use arag_core::llm::heuristic::overlap_backend;
use arag_core::llm::{ChatBackend, ChatRequest, MockBackend};
use arag_core::prompts::PromptSet;

fn context(long_term: &[&str], session: &[&str]) -> UserContext {
    let at = |ids: &[&str], base: u64| -> Vec<Interaction> {
        ids.iter()
            .enumerate()
            .map(|(n, id)| Interaction::new("u1", *id, base + n as u64 * 60))
            .collect()
    };
    UserContext {
        user_id: "u1".into(),
        long_term: at(long_term, 1_000),
        session: at(session, 100_000),
    }
}

fn agents<'a>(
    catalog: &'a Catalog,
    backend: &'a dyn ChatBackend,
    prompts: &'a PromptSet,
    settings: &'a AgentSettings,
) -> Agents<'a> {
    Agents {
        catalog,
        backend,
        prompts,
        settings,
    }
}

fn user_text(request: &ChatRequest) -> String {
    request
        .messages
        .iter()
        .map(|m| format!("[{:?}]\n{}", m.role, m.content))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn user_understanding_prompt() {
    let catalog = common::tote_catalog();
    let (prompts, settings, mock) = (PromptSet::default(), AgentSettings::default(), MockBackend::strict());
    let a = agents(&catalog, &mock, &prompts, &settings);
    let request = a.uua_request(&context(&["K01", "S01"], &["B02", "B04"])).unwrap();
    insta::assert_snapshot!("uua_prompt", user_text(&request));
}

#[test]
fn history_cap_keeps_the_newest() {
    let catalog = common::tote_catalog();
    let prompts = PromptSet::default();
    let settings = AgentSettings {
        max_history_items: 2,
        ..AgentSettings::default()
    };
    let mock = MockBackend::strict();
    let a = agents(&catalog, &mock, &prompts, &settings);
    let (session, long_term) = a.history_blocks(Role::UserUnderstanding, &context(&["K01", "K02", "W01"], &[])).unwrap();
    assert_eq!(session, "(none)");
    let ids: Vec<&str> = long_term.lines().map(|l| &l[3..6]).collect();
    assert_eq!(ids, ["W01", "K02"]);

    let (session, long_term) = a.history_blocks(Role::UserUnderstanding, &context(&[], &["B01"])).unwrap();
    assert!(session.starts_with("- [B01]"));
    assert_eq!(long_term, "(none)");
}

#[test]
fn prompts_are_pure() {
    let catalog = common::tote_catalog();
    let (prompts, settings, mock) = (PromptSet::default(), AgentSettings::default(), MockBackend::strict());
    let a = agents(&catalog, &mock, &prompts, &settings);
    let ctx = context(&["K01"], &["B02"]);
    let item = catalog.get("B01").unwrap();
    assert_eq!(a.uua_request(&ctx).unwrap().digest(), a.uua_request(&ctx).unwrap().digest());
    assert_eq!(a.nli_request(item, &ctx).unwrap().digest(), a.nli_request(item, &ctx).unwrap().digest());
}

#[test]
fn nli_scripted_score() {
    let catalog = common::tote_catalog();
    let (prompts, settings) = (PromptSet::default(), AgentSettings::default());
    let ctx = context(&[], &["B02"]);
    let mut mock = MockBackend::strict();
    {
        let a = agents(&catalog, &mock, &prompts, &settings);
        let req = a.nli_request(catalog.get("B01").unwrap(), &ctx).unwrap();
        mock.script_request(&req, r#"{"score": 0.9, "rationale": "matches style"}"#);
    }
    let a = agents(&catalog, &mock, &prompts, &settings);
    let board = Blackboard::new(common::FROZEN);
    let (j, usage) = a.run_nli(catalog.get("B01").unwrap(), &ctx, &board).unwrap();
    assert_eq!(j.score, 0.9);
    assert_eq!(j.rationale, "matches style");
    assert_eq!(usage.len(), 1);
    let posted = board.read(Some(Role::Nli));
    assert_eq!(posted[0].id, "nli:B01");
    assert_eq!(posted[0].score, Some(0.9));
}

#[test]
fn nli_repair_then_give_up() {
    let catalog = common::tote_catalog();
    let (prompts, settings) = (PromptSet::default(), AgentSettings::default());
    let ctx = context(&[], &["B02"]);
    let item = catalog.get("B03").unwrap();

    // Unreadable first, readable after the repair prompt.
    let mock = MockBackend::with_responder(|r: &ChatRequest| {
        if r.messages.len() > 2 { r#"{"score": 1.7}"#.into() } else { "I think it fits.".into() }
    });
    let a = agents(&catalog, &mock, &prompts, &settings);
    let (j, usage) = a.run_nli(item, &ctx, &Blackboard::new(common::FROZEN)).unwrap();
    assert_eq!((j.score, usage.len()), (1.0, 2));
    let calls = mock.calls();
    assert!(calls[1].messages.last().unwrap().content.contains("I think it fits."));
    assert_eq!(calls[1].messages[..2], calls[0].messages[..]);

    // Unreadable twice.
    let mock = MockBackend::with_responder(|_: &ChatRequest| "no json here".into());
    let a = agents(&catalog, &mock, &prompts, &settings);
    let (j, usage) = a.run_nli(item, &ctx, &Blackboard::new(common::FROZEN)).unwrap();
    assert_eq!((j.score, j.rationale.as_str(), usage.len()), (0.0, PARSE_FAILURE, 2));
}

#[test]
fn context_summary_lists_items_by_score() {
    let catalog = common::tote_catalog();
    let (prompts, settings) = (PromptSet::default(), AgentSettings::default());
    let mock = MockBackend::with_responder(|_: &ChatRequest| "user favors checkered totes".into());
    let a = agents(&catalog, &mock, &prompts, &settings);
    let judgements = [
        NliJudgement { item_id: "B04".into(), score: 0.6, rationale: String::new() },
        NliJudgement { item_id: "B01".into(), score: 0.95, rationale: String::new() },
    ];
    let accepted = [catalog.get("B04").unwrap(), catalog.get("B01").unwrap()];
    let summary = UserSummary { text: "vegan leather, checkered bags".into() };
    let request = a.csa_request(&accepted, &summary, Some(&judgements)).unwrap();
    insta::assert_snapshot!("csa_prompt", user_text(&request));

    let board = Blackboard::new(common::FROZEN);
    let (cs, _) = a.run_csa(&accepted, &summary, Some(&judgements), &board).unwrap();
    assert_eq!(cs.text, "user favors checkered totes");
    assert_eq!(cs.source_item_ids, ["B04", "B01"]);
    assert_eq!(board.read(Some(Role::ContextSummary)).len(), 1);
}

#[test]
fn ranker_follows_reply_and_handles_one_candidate() {
    let catalog = Catalog::from_items([Item::new("b1", "one"), Item::new("b2", "two"), Item::new("b3", "three")]).unwrap();
    let (prompts, settings) = (PromptSet::default(), AgentSettings::default());
    let mock = MockBackend::with_responder(|_: &ChatRequest| r#"["b2","b1","b3"]"#.into());
    let a = agents(&catalog, &mock, &prompts, &settings);
    let summary = UserSummary { text: "x".into() };
    let items: Vec<&Item> = catalog.items().iter().collect();
    let order: Vec<String> = vec!["b1".into(), "b2".into(), "b3".into()];
    let (r, _) = a.run_ira(&summary, None, &items, &order, &Blackboard::new(common::FROZEN)).unwrap();
    assert_eq!(r.item_ids, ["b2", "b1", "b3"]);
    let (r, _) = a.run_ira(&summary, None, &items[2..], &order, &Blackboard::new(common::FROZEN)).unwrap();
    assert_eq!(r.item_ids, ["b3"]);
}

/// The worked example: a user into vegan leather and checkered bags should
/// see the checkered tote above a plain hobo bag and a generic tote.
#[test]
fn checkered_tote_example() {
    let catalog = Catalog::from_items([
        Item::new("H1", "Dasein Hobo Handbag").with_description("slouchy shoulder bag"),
        Item::new("T2", "Women's Large Tote").with_description("roomy everyday tote"),
        Item::new("T1", "BUTIED Checkered Tote Shoulder Handbag")
            .with_description("checkered pattern, vegan leather trim"),
    ])
    .unwrap();
    let (prompts, settings) = (PromptSet::default(), AgentSettings::default());
    let backend = overlap_backend();
    let a = agents(&catalog, &backend, &prompts, &settings);
    let summary = UserSummary { text: "Interested in vegan leather products, checkered bags and stylish accessories.".into() };
    let items: Vec<&Item> = catalog.items().iter().collect();
    let order: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
    let (r, _) = a.run_ira(&summary, None, &items, &order, &Blackboard::new(common::FROZEN)).unwrap();
    assert_eq!(r.item_ids[0], "T1");
    let hobo = r.item_ids.iter().position(|id| id == "H1").unwrap();
    assert!(hobo > 0);
}

#[test]
fn baselines_differ_only_in_history() {
    let catalog = common::tote_catalog();
    let (prompts, settings, mock) = (PromptSet::default(), AgentSettings::default(), MockBackend::strict());
    let a = agents(&catalog, &mock, &prompts, &settings);
    let candidates = [catalog.get("B01").unwrap(), catalog.get("S02").unwrap()];
    let recent = [catalog.get("K02").unwrap(), catalog.get("K01").unwrap()];
    let similar = [catalog.get("B02").unwrap(), catalog.get("S01").unwrap()];
    let r = user_text(&a.baseline_request(&recent, &candidates).unwrap());
    let v = user_text(&a.baseline_request(&similar, &candidates).unwrap());
    let diff: Vec<String> = r
        .lines()
        .zip(v.lines())
        .filter(|(x, y)| x != y)
        .map(|(x, y)| format!("- {x}\n+ {y}"))
        .collect();
    assert_eq!(r.lines().count(), v.lines().count());
    insta::assert_snapshot!("baseline_history_diff", diff.join("\n"));
}
