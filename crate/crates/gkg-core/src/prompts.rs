//! Text scaffolding for generation backends.
//!
//! Retrieved triples are verbalized into one-line statements with a
//! relation-aware pattern, statements plus the interaction history render
//! into a candidate-selection prompt with lettered options, and free-text
//! replies are parsed back into option letters. Separate refinement prompts
//! exist per retrieval strategy for optionally rewriting the statement block
//! through an external generator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Verbs that read naturally between two entity names. A relation whose text
/// starts with one of these (written in lowercase) is emitted verbatim;
/// anything else is treated as a noun phrase and bridged with "has".
const VERB_STARTS: &[&str] = &[
    "acted", "appeared", "appears", "belongs", "bound", "connects", "contains", "crafted",
    "directed", "features", "follows", "had", "has", "have", "includes", "is", "joined", "likes",
    "linked", "matched", "paired", "played", "plays", "precedes", "produced", "rated", "refers",
    "relates", "released", "sang", "sings", "starred", "stars", "tied", "was", "watched", "were",
    "won", "wrote",
];

fn first_token(text: &str) -> &str {
    text.split_whitespace().next().unwrap_or("")
}

/// Whether the relation text starts with a known lowercase verb.
pub fn is_verb_phrase(relation: &str) -> bool {
    VERB_STARTS.binary_search(&first_token(relation)).is_ok()
}

/// Verbalize one (head, relation, tail) triple as a flat statement.
///
/// Verb-phrase relations read as "head relation tail"; noun relations read as
/// "head has relation tail".
pub fn statement(head: &str, relation: &str, tail: &str) -> String {
    if is_verb_phrase(relation) {
        format!("{head} {relation} {tail}")
    } else {
        format!("{head} has {relation} {tail}")
    }
}

/// Option letter for a candidate position (A, B, C, ...). Supports pools up
/// to 26 candidates; the protocol uses 20 (A-T).
pub fn option_letter(i: usize) -> Option<char> {
    if i < 26 {
        Some((b'A' + i as u8) as char)
    } else {
        None
    }
}

/// Candidate position for an option letter, accepting either case.
pub fn letter_index(c: char, n: usize) -> Option<usize> {
    let up = c.to_ascii_uppercase();
    if !up.is_ascii_uppercase() {
        return None;
    }
    let i = (up as u8 - b'A') as usize;
    if i < n {
        Some(i)
    } else {
        None
    }
}

/// Parse a backend reply into a candidate index.
///
/// The first stand-alone letter within the pool's range wins; "stand-alone"
/// means not embedded in a longer alphanumeric word, so option labels survive
/// replies like "Answer: H." while words like "The" do not trigger.
pub fn parse_option(reply: &str, n: usize) -> Option<usize> {
    let bytes = reply.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        let c = b as char;
        if !c.is_ascii_alphabetic() {
            continue;
        }
        let prev_ok = i == 0 || !bytes[i - 1].is_ascii_alphanumeric();
        let next_ok = i + 1 >= bytes.len() || !bytes[i + 1].is_ascii_alphanumeric();
        if prev_ok && next_ok {
            if let Some(idx) = letter_index(c, n) {
                return Some(idx);
            }
        }
    }
    None
}

/// Refinement prompt for flat triple statements. Placeholder:
/// `{structured_triples_from_KG}`.
pub const REFINE_TRIPLES_TEMPLATE: &str = "The lines below are facts pulled from a knowledge graph as independent triples.\nRewrite them into one short, fluent paragraph that keeps every fact and adds nothing.\n\nFacts:\n{structured_triples_from_KG}\n\nParagraph:";

/// Refinement prompt for neighborhood subgraphs. Placeholder:
/// `{structured_subgraph_from_KG}`.
pub const REFINE_SUBGRAPH_TEMPLATE: &str = "The lines below describe a small neighborhood of a knowledge graph around a few key entities.\nRewrite them into one short, fluent paragraph that keeps every fact and adds nothing.\n\nNeighborhood:\n{structured_subgraph_from_KG}\n\nParagraph:";

/// Refinement prompt for spanning-forest subgraphs. Placeholder:
/// `{pagerank_mst_graph_from_KG}`.
pub const REFINE_FOREST_TEMPLATE: &str = "The lines below are the strongest connections kept from a random-walk exploration of a knowledge graph.\nRewrite them into one short, fluent paragraph that keeps every fact and adds nothing.\n\nConnections:\n{pagerank_mst_graph_from_KG}\n\nParagraph:";

/// Render the refinement prompt for a retrieval strategy index (1-3 for the
/// three retrieving strategies; the no-retrieval strategy has nothing to
/// refine and yields None).
pub fn render_refine(expert_index: usize, statements_text: &str) -> Option<String> {
    let (template, placeholder) = match expert_index {
        1 => (REFINE_TRIPLES_TEMPLATE, "{structured_triples_from_KG}"),
        2 => (REFINE_SUBGRAPH_TEMPLATE, "{structured_subgraph_from_KG}"),
        3 => (REFINE_FOREST_TEMPLATE, "{pagerank_mst_graph_from_KG}"),
        _ => return None,
    };
    Some(template.replace(placeholder, statements_text))
}

/// Selection prompt skeleton. Placeholders: `{history}`, `{knowledge}` (the
/// whole block, may render empty), `{candidates}`.
pub const RECOMMEND_TEMPLATE: &str = "You are picking the next item a user will interact with.\n\nRecent history, oldest first:\n{history}\n\n{knowledge}Candidates, one per letter:\n{candidates}\n\nReply with the single letter of your pick.";

fn numbered(lines: &[String]) -> String {
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, line));
    }
    out
}

fn lettered(lines: &[String]) -> String {
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        let letter = option_letter(i).unwrap_or('?');
        out.push_str(&format!("{letter}. {line}\n"));
    }
    out
}

/// Render the selection prompt. With no statements the knowledge block
/// disappears entirely (the no-retrieval variant).
pub fn render_recommend(history: &[String], statements: &[String], candidates: &[String]) -> String {
    let knowledge = if statements.is_empty() {
        String::new()
    } else {
        format!("Knowledge:\n{}\n", numbered(statements))
    };
    RECOMMEND_TEMPLATE
        .replace("{history}", numbered(history).trim_end())
        .replace("{knowledge}", &knowledge)
        .replace("{candidates}", lettered(candidates).trim_end())
}

/// Join statements into the text block fed to prompts and context embedding.
pub fn knowledge_text(statements: &[String]) -> String {
    statements.join("\n")
}

/// Collect per-letter counts into a floored, normalized distribution over
/// `n` candidates. Missing letters receive `floor` before normalization.
pub fn letter_counts_to_distribution(counts: &[usize], floor: f64) -> Vec<f64> {
    let mut dist: Vec<f64> = counts.iter().map(|&c| (c as f64).max(floor)).collect();
    let sum: f64 = dist.iter().sum();
    for d in dist.iter_mut() {
        *d /= sum;
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::borrow::ToOwned;
    use alloc::vec;

    #[test]
    fn verb_list_is_sorted_for_binary_search() {
        let mut sorted = VERB_STARTS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, VERB_STARTS);
    }

    #[test]
    fn statements_bridge_noun_relations_with_has() {
        assert_eq!(
            statement("The Terminator", "director", "James Cameron"),
            "The Terminator has director James Cameron"
        );
        assert_eq!(statement("alpha", "linked", "beta"), "alpha linked beta");
        assert_eq!(statement("a", "features", "comedy"), "a features comedy");
        // Capitalized relation text is not a lowercase verb phrase.
        assert_eq!(statement("a", "Directed", "b"), "a has Directed b");
        assert_eq!(statement("a", "", "b"), "a has  b");
    }

    #[test]
    fn letters_round_trip_and_respect_pool_size() {
        assert_eq!(option_letter(0), Some('A'));
        assert_eq!(option_letter(19), Some('T'));
        assert_eq!(option_letter(26), None);
        assert_eq!(letter_index('H', 20), Some(7));
        assert_eq!(letter_index('h', 20), Some(7));
        assert_eq!(letter_index('U', 20), None);
        assert_eq!(letter_index('T', 20), Some(19));
    }

    #[test]
    fn option_parsing_finds_standalone_letters_only() {
        assert_eq!(parse_option("H", 20), Some(7));
        assert_eq!(parse_option("Answer: H.", 20), Some(7));
        assert_eq!(parse_option("b", 20), Some(1));
        assert_eq!(parse_option("(C)", 20), Some(2));
        // "The" must not trigger on T; the stand-alone "A" later wins.
        assert_eq!(parse_option("The answer is A", 20), Some(0));
        assert_eq!(parse_option("Hmm", 20), None);
        assert_eq!(parse_option("42", 20), None);
        assert_eq!(parse_option("", 20), None);
        // Out-of-pool letters are skipped, in-pool later ones still found.
        assert_eq!(parse_option("Z then D", 4), Some(3));
    }

    #[test]
    fn render_fills_every_placeholder() {
        let hist = vec!["first film".to_owned(), "second film".to_owned()];
        let stmts = vec!["a linked b".to_owned()];
        let cands = vec!["x".to_owned(), "y".to_owned()];
        let p = render_recommend(&hist, &stmts, &cands);
        assert!(!p.contains('{') && !p.contains('}'), "unfilled placeholder in {p}");
        assert!(p.contains("1. first film\n2. second film"));
        assert!(p.contains("Knowledge:\n1. a linked b"));
        assert!(p.contains("A. x\nB. y"));
    }

    #[test]
    fn no_retrieval_variant_has_no_knowledge_block() {
        let p = render_recommend(&["h".to_owned()], &[], &["c".to_owned()]);
        assert!(!p.contains("Knowledge:"));
        assert!(!p.contains('{'));
    }

    #[test]
    fn refine_templates_embed_the_statements() {
        let p = render_refine(1, "a linked b").unwrap();
        assert!(p.contains("a linked b") && !p.contains("{structured_triples_from_KG}"));
        let p = render_refine(2, "x").unwrap();
        assert!(!p.contains("{structured_subgraph_from_KG}"));
        let p = render_refine(3, "x").unwrap();
        assert!(!p.contains("{pagerank_mst_graph_from_KG}"));
        assert_eq!(render_refine(0, "x"), None);
        assert_eq!(render_refine(4, "x"), None);
    }

    #[test]
    fn counts_floor_and_normalize() {
        let dist = letter_counts_to_distribution(&[3, 1, 0, 0], 1e-8);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(dist[2] > 0.0 && dist[2] < 1e-8);
        assert!((dist[0] - 0.75).abs() < 1e-7);
        // All-miss counts collapse to uniform.
        let dist = letter_counts_to_distribution(&[0, 0], 1e-8);
        assert!((dist[0] - 0.5).abs() < 1e-12 && (dist[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn knowledge_text_joins_lines() {
        assert_eq!(knowledge_text(&["a".to_owned(), "b".to_owned()]), "a\nb");
        assert_eq!(knowledge_text(&[]), "");
    }
}
