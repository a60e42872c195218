use serde::{Deserialize, Serialize};

use super::{item_token, user_token, MixedVocabulary, NO, YES};
use crate::corpus::Catalog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    InteractionPrediction,
    TopK,
}

/// Natural answers use only base words (`Yes` / `No`); mixed answers are an
/// item token from the extended vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Natural,
    Mixed,
}

impl Task {
    pub fn answer_type(self) -> AnswerType {
        match self {
            Task::InteractionPrediction => AnswerType::Natural,
            Task::TopK => AnswerType::Mixed,
        }
    }
}

/// `Tokens` writes each entity as its token followed by the parenthesized
/// title; `TextOnly` writes titles alone and never emits entity tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Tokens,
    TextOnly,
}

/// Domain wording for the templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptTemplate {
    pub noun: String,
    pub noun_plural: String,
    pub verb: String,
    pub verb_past: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            noun: "movie".into(),
            noun_plural: "movies".into(),
            verb: "watch".into(),
            verb_past: "watched".into(),
        }
    }
}

impl PromptTemplate {
    pub fn generic() -> Self {
        Self {
            noun: "item".into(),
            noun_plural: "items".into(),
            verb: "choose".into(),
            verb_past: "chosen".into(),
        }
    }

    /// Every fixed word the templates can emit, for base-vocabulary building.
    pub fn fixed_text(&self) -> String {
        let history = [(0usize, "x")];
        let a = render_prompt(
            self,
            0,
            &history,
            Target::Interaction {
                item: 0,
                title: "x",
                label: true,
            },
            PromptMode::TextOnly,
        )
        .expect("static template renders");
        let b = render_prompt(
            self,
            0,
            &history,
            Target::Candidates {
                items: &history,
                positive: 0,
            },
            PromptMode::TextOnly,
        )
        .expect("static template renders");
        format!("{} {} ( ) , {} {}", a.prompt, b.prompt, YES, NO)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Interaction {
        item: usize,
        title: &'a str,
        label: bool,
    },
    Candidates {
        items: &'a [(usize, &'a str)],
        positive: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub prompt: String,
    pub answer: String,
}

fn entity(mode: PromptMode, item: usize, title: &str) -> String {
    match mode {
        PromptMode::Tokens => format!("{} ({})", item_token(item), title),
        PromptMode::TextOnly => title.to_owned(),
    }
}

/// Renders one instruction and its answer.
///
/// Interaction prediction:
/// `User <uidU> has watched the following movies <iidA> (Title A), <iidB> (Title B). Predict if he/she will watch <iidT> (Title T) next. Answer:`
/// with answer `Yes` / `No`. Top-K replaces the question with
/// `Predict which 1 movie in candidate set will he/she watch most probably? Candidates: ... . Answer:`
/// and answers with the positive's item token (its title in text-only mode).
pub fn render_prompt(
    template: &PromptTemplate,
    user: usize,
    history: &[(usize, &str)],
    target: Target<'_>,
    mode: PromptMode,
) -> Result<RenderedPrompt> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("prompt history is empty".into()));
    }
    let who = match mode {
        PromptMode::Tokens => format!("User {}", user_token(user)),
        PromptMode::TextOnly => "User".to_owned(),
    };
    let hist = history
        .iter()
        .map(|&(i, t)| entity(mode, i, t))
        .collect::<Vec<_>>()
        .join(", ");
    let head = format!(
        "{who} has {} the following {} {hist}.",
        template.verb_past, template.noun_plural
    );
    match target {
        Target::Interaction { item, title, label } => Ok(RenderedPrompt {
            prompt: format!(
                "{head} Predict if he/she will {} {} next. Answer:",
                template.verb,
                entity(mode, item, title)
            ),
            answer: if label { YES } else { NO }.to_owned(),
        }),
        Target::Candidates { items, positive } => {
            if items.is_empty() {
                return Err(Error::InvalidArgument(
                    "top-k prompt needs candidates".into(),
                ));
            }
            let pos_title = items
                .iter()
                .find(|&&(i, _)| i == positive)
                .map(|&(_, t)| t)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("positive {positive} not among candidates"))
                })?;
            let cands = items
                .iter()
                .map(|&(i, t)| entity(mode, i, t))
                .collect::<Vec<_>>()
                .join(", ");
            Ok(RenderedPrompt {
                prompt: format!(
                    "{head} Predict which 1 {} in candidate set will he/she {} most probably? Candidates: {cands}. Answer:",
                    template.noun, template.verb
                ),
                answer: match mode {
                    PromptMode::Tokens => item_token(positive),
                    PromptMode::TextOnly => pos_title.to_owned(),
                },
            })
        }
    }
}

/// Prompt and answer token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub prompt: Vec<usize>,
    pub answer: Vec<usize>,
}

/// Renders and encodes task prompts under a history cap and a context limit.
/// When a prompt plus answer would overflow, the oldest history items are
/// dropped first; an overflow with a single history item is an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBuilder {
    pub template: PromptTemplate,
    pub mode: PromptMode,
    pub history_cap: usize,
    pub context_limit: usize,
}

impl PromptBuilder {
    fn fit(
        &self,
        vocab: &MixedVocabulary,
        catalog: &Catalog,
        history: &[usize],
        render: impl Fn(&[(usize, &str)]) -> Result<RenderedPrompt>,
    ) -> Result<EncodedPair> {
        let start = history.len().saturating_sub(self.history_cap.max(1));
        let hist: Vec<(usize, &str)> = history[start..]
            .iter()
            .map(|&i| (i, catalog.title(i)))
            .collect();
        let mut from = 0;
        loop {
            let r = render(&hist[from..])?;
            let prompt = vocab.encode(&r.prompt).ids;
            let answer = vocab.encode(&r.answer).ids;
            let len = prompt.len() + answer.len();
            if len <= self.context_limit {
                return Ok(EncodedPair { prompt, answer });
            }
            if from + 1 >= hist.len() {
                return Err(Error::ContextOverflow {
                    len,
                    limit: self.context_limit,
                });
            }
            from += 1;
        }
    }

    pub fn interaction(
        &self,
        vocab: &MixedVocabulary,
        catalog: &Catalog,
        user: usize,
        history: &[usize],
        item: usize,
        label: bool,
    ) -> Result<EncodedPair> {
        self.fit(vocab, catalog, history, |h| {
            render_prompt(
                &self.template,
                user,
                h,
                Target::Interaction {
                    item,
                    title: catalog.title(item),
                    label,
                },
                self.mode,
            )
        })
    }

    pub fn top_k(
        &self,
        vocab: &MixedVocabulary,
        catalog: &Catalog,
        user: usize,
        history: &[usize],
        candidates: &[usize],
        positive: usize,
    ) -> Result<EncodedPair> {
        let items: Vec<(usize, &str)> = candidates.iter().map(|&i| (i, catalog.title(i))).collect();
        self.fit(vocab, catalog, history, |h| {
            render_prompt(
                &self.template,
                user,
                h,
                Target::Candidates {
                    items: &items,
                    positive,
                },
                self.mode,
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ItemEntry, UserEntry};
    use crate::vocab::{build_base_vocab, extend_vocab};

    #[test]
    fn interaction_prompt_layout() {
        let r = render_prompt(
            &PromptTemplate::default(),
            0,
            &[(744, "A Close Shave"), (587, "Aladdin")],
            Target::Interaction {
                item: 47,
                title: "Pocahontas",
                label: true,
            },
            PromptMode::Tokens,
        )
        .unwrap();
        assert_eq!(
            r.prompt,
            "User <uid1> has watched the following movies <iid745> (A Close Shave), <iid588> (Aladdin). \
             Predict if he/she will watch <iid48> (Pocahontas) next. Answer:"
        );
        assert_eq!(r.answer, "Yes");
    }

    #[test]
    fn top_k_answer_is_positive_token() {
        let cands = [(1183, "Mediterraneo"), (47, "Pocahontas"), (1118, "Drunks")];
        let r = render_prompt(
            &PromptTemplate::default(),
            0,
            &[(744, "A Close Shave")],
            Target::Candidates {
                items: &cands,
                positive: 47,
            },
            PromptMode::Tokens,
        )
        .unwrap();
        assert_eq!(r.answer, "<iid48>");
        assert!(r.prompt.contains(
            "Predict which 1 movie in candidate set will he/she watch most probably? \
             Candidates: <iid1184> (Mediterraneo), <iid48> (Pocahontas), <iid1119> (Drunks). Answer:"
        ));
    }

    #[test]
    fn text_only_mode_has_no_entity_tokens() {
        let cands = [(3, "Drunks"), (4, "Heat")];
        for target in [
            Target::Interaction {
                item: 4,
                title: "Heat",
                label: false,
            },
            Target::Candidates {
                items: &cands,
                positive: 4,
            },
        ] {
            let r = render_prompt(
                &PromptTemplate::default(),
                2,
                &[(1, "Aladdin")],
                target,
                PromptMode::TextOnly,
            )
            .unwrap();
            assert!(!r.prompt.contains("<uid") && !r.prompt.contains("<iid"));
            assert!(!r.answer.contains("<iid"));
        }
    }

    #[test]
    fn errors_on_empty_inputs() {
        let t = PromptTemplate::default();
        let none: [(usize, &str); 0] = [];
        assert!(render_prompt(
            &t,
            0,
            &none,
            Target::Interaction {
                item: 0,
                title: "x",
                label: true
            },
            PromptMode::Tokens
        )
        .is_err());
        assert!(render_prompt(
            &t,
            0,
            &[(1, "y")],
            Target::Candidates {
                items: &none,
                positive: 0
            },
            PromptMode::Tokens
        )
        .is_err());
    }

    fn small_catalog(n: usize) -> Catalog {
        Catalog {
            users: vec![UserEntry {
                index: 0,
                original_id: "u".into(),
                profile: None,
            }],
            items: (0..n)
                .map(|i| ItemEntry {
                    index: i,
                    original_id: i.to_string(),
                    title: format!("title{i} words"),
                    description: None,
                })
                .collect(),
        }
    }

    #[test]
    fn top_k_prompt_lists_every_candidate_once() {
        let cat = small_catalog(30);
        let t = PromptTemplate::default();
        let texts: Vec<String> = cat
            .items
            .iter()
            .map(|i| i.title.clone())
            .chain([t.fixed_text()])
            .collect();
        let vocab = extend_vocab(build_base_vocab(&texts, 1), 1, 30);
        let b = PromptBuilder {
            template: t,
            mode: PromptMode::Tokens,
            history_cap: 10,
            context_limit: 512,
        };
        let cands: Vec<usize> = (5..25).collect();
        let pair = b.top_k(&vocab, &cat, 0, &[0, 1, 2], &cands, 9).unwrap();
        for &c in &cands {
            let id = vocab.item_id(c).unwrap();
            assert_eq!(pair.prompt.iter().filter(|&&x| x == id).count(), 1);
        }
        assert_eq!(pair.answer, vec![vocab.item_id(9).unwrap()]);
        assert!(pair.prompt.iter().all(|&id| id != vocab.unk()));
    }

    #[test]
    fn history_is_capped_and_trimmed_to_fit() {
        let cat = small_catalog(30);
        let t = PromptTemplate::default();
        let texts: Vec<String> = cat
            .items
            .iter()
            .map(|i| i.title.clone())
            .chain([t.fixed_text()])
            .collect();
        let vocab = extend_vocab(build_base_vocab(&texts, 1), 1, 30);
        let mut b = PromptBuilder {
            template: t,
            mode: PromptMode::Tokens,
            history_cap: 3,
            context_limit: 512,
        };
        let hist: Vec<usize> = (0..12).collect();
        let pair = b.interaction(&vocab, &cat, 0, &hist, 20, true).unwrap();
        let present: Vec<usize> = (0..12)
            .filter(|&i| pair.prompt.contains(&vocab.item_id(i).unwrap()))
            .collect();
        assert_eq!(present, vec![9, 10, 11]);

        b.history_cap = 12;
        let full = b.interaction(&vocab, &cat, 0, &hist, 20, true).unwrap();
        b.context_limit = full.prompt.len() + 1 - 6;
        let trimmed = b.interaction(&vocab, &cat, 0, &hist, 20, true).unwrap();
        assert!(trimmed.prompt.len() + 1 <= b.context_limit);
        assert!(!trimmed.prompt.contains(&vocab.item_id(0).unwrap()));
        assert!(trimmed.prompt.contains(&vocab.item_id(11).unwrap()));

        b.context_limit = 5;
        assert!(matches!(
            b.interaction(&vocab, &cat, 0, &hist, 20, true),
            Err(Error::ContextOverflow { .. })
        ));
    }
}
