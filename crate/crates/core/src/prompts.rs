//! Prompt templates in Chinese and English.
//!
//! Templates are selected by the book's `prompt_language`. Every function is
//! pure; callers assemble the pieces in a fixed section order.

use indexmap::IndexMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lang {
    Zh,
    En,
}

impl Lang {
    pub fn of(prompt_language: &str) -> Self {
        if prompt_language == "zh" {
            Lang::Zh
        } else {
            Lang::En
        }
    }

    /// Full-width colon for Chinese labels.
    pub fn colon(self) -> &'static str {
        match self {
            Lang::Zh => "：",
            Lang::En => ": ",
        }
    }
}

/// Dictionary rendered as a compact JSON-like object in entry order.
pub fn dictionary(entries: &IndexMap<String, String>) -> String {
    let body: Vec<String> = entries
        .iter()
        .map(|(k, v)| format!("{}: {}", serde_json::to_string(k).unwrap(), serde_json::to_string(v).unwrap()))
        .collect();
    format!("{{{}}}", body.join(", "))
}

pub fn fenced(code: &str) -> String {
    format!("```python\n{}\n```", code.trim_end())
}

// ---------------------------------------------------------------------------
// Translation

pub fn translate_framing(lang: Lang, src: &str, tgt: &str, has_rules: bool, has_examples: bool) -> String {
    match lang {
        Lang::Zh => {
            let mut aids = Vec::new();
            if has_rules {
                aids.push("语法规则");
            }
            if has_examples {
                aids.push("例句");
            }
            aids.push("词典");
            format!("你是一位精通{src}和{tgt}的语言学专家。请借助下面给出的{}，把{src}句子译成{tgt}。", aids.join("、"))
        }
        Lang::En => {
            let mut aids = Vec::new();
            if has_rules {
                aids.push("grammar rules");
            }
            if has_examples {
                aids.push("example sentences");
            }
            aids.push("dictionary");
            format!(
                "You are an expert linguist who knows both {src} and {tgt}. Using the {} below, translate the {src} sentence into {tgt}.",
                aids.join(", ")
            )
        }
    }
}

/// Variant of the framing used when no dictionary is shown.
pub fn translate_framing_no_lexicon(lang: Lang, src: &str, tgt: &str, has_rules: bool, has_examples: bool) -> String {
    let full = translate_framing(lang, src, tgt, has_rules, has_examples);
    match lang {
        Lang::Zh => full.replace("、词典", "").replace("借助下面给出的词典，", ""),
        Lang::En => full.replace(", dictionary", "").replace("Using the dictionary below, translate", "Translate"),
    }
}

pub fn rules_heading(lang: Lang, code: bool) -> &'static str {
    match (lang, code) {
        (Lang::Zh, false) => "## 语法规则：",
        (Lang::Zh, true) => "## 语法规则（代码形式）：",
        (Lang::En, false) => "## Grammar rules:",
        (Lang::En, true) => "## Grammar rules (as code):",
    }
}

pub fn numbered_rule(lang: Lang, n: usize, body: &str) -> String {
    match lang {
        Lang::Zh => format!("规则{n}：\n{body}"),
        Lang::En => format!("Rule {n}:\n{body}"),
    }
}

pub fn examples_heading(lang: Lang) -> &'static str {
    match lang {
        Lang::Zh => "## 例句：",
        Lang::En => "## Examples:",
    }
}

pub fn example_label(lang: Lang, n: usize) -> String {
    match lang {
        Lang::Zh => format!("例句{n}："),
        Lang::En => format!("Example {n}:"),
    }
}

pub fn dictionary_label(lang: Lang) -> &'static str {
    match lang {
        Lang::Zh => "词典：",
        Lang::En => "Dictionary: ",
    }
}

pub fn test_dictionary_heading(lang: Lang) -> &'static str {
    match lang {
        Lang::Zh => "## 待译句子的词典：",
        Lang::En => "## Dictionary for the sentence:",
    }
}

pub fn test_sentence_heading(lang: Lang) -> &'static str {
    match lang {
        Lang::Zh => "## 待译句子：",
        Lang::En => "## Sentence to translate:",
    }
}

pub fn answer_cue(lang: Lang, tgt: &str, want_igt: bool) -> String {
    match (lang, want_igt) {
        (Lang::Zh, false) => format!("请只输出{tgt}译文，不要解释。\n{tgt}译文："),
        (Lang::Zh, true) => format!("请先写出这个句子的IGT，再另起一行输出{tgt}译文，不要解释。\nIGT："),
        (Lang::En, false) => format!("Output only the {tgt} translation, without explanation.\n{tgt} translation:"),
        (Lang::En, true) => {
            format!("First write the IGT of the sentence, then the {tgt} translation on a new line, without explanation.\nIGT:")
        }
    }
}

/// Labels stripped from the start of answer lines.
pub fn answer_labels(src: &str, tgt: &str) -> Vec<String> {
    let mut v: Vec<String> = [
        format!("{tgt}译文"),
        format!("{tgt}翻译"),
        format!("{tgt} translation"),
        "翻译结果".into(),
        "翻译".into(),
        "译文".into(),
        "答案".into(),
        "答".into(),
        "Translation".into(),
        "translation".into(),
        "Answer".into(),
        "Output".into(),
        tgt.to_string(),
        src.to_string(),
    ]
    .into_iter()
    .collect();
    // Longest first so "翻译结果" wins over "翻译".
    v.sort_by_key(|s| std::cmp::Reverse(s.chars().count()));
    v
}

// ---------------------------------------------------------------------------
// Retrieval

pub fn classify_prompt(lang: Lang, lo: &str, tgt: &str, rule: &str, sentence: &str, dict: Option<&str>) -> String {
    let mut s = match lang {
        Lang::Zh => format!(
            "你是一位语言学专家。下面给出一条{lo}语法规则，以及一个需要翻译成{tgt}的句子。请判断翻译这个句子时是否要用到这条规则。\n\n## 语法规则：\n{rule}\n\n## 句子：\n{sentence}\n"
        ),
        Lang::En => format!(
            "You are an expert linguist. Below are one {lo} grammar rule and a sentence to be translated into {tgt}. Decide whether translating the sentence requires this rule.\n\n## Grammar rule:\n{rule}\n\n## Sentence:\n{sentence}\n"
        ),
    };
    if let Some(d) = dict {
        s.push_str(&format!("\n{}\n{d}\n", dictionary_section(lang)));
    }
    s.push_str(match lang {
        Lang::Zh => "\n只回答“是”或“否”。",
        Lang::En => "\nAnswer with \"yes\" or \"no\" only.",
    });
    s
}

fn dictionary_section(lang: Lang) -> &'static str {
    match lang {
        Lang::Zh => "## 词典：",
        Lang::En => "## Dictionary:",
    }
}

pub fn full_book_prompt(lang: Lang, lo: &str, tgt: &str, book: &str, sentence: &str, dict: Option<&str>) -> String {
    let mut s = match lang {
        Lang::Zh => format!(
            "你是一位语言学专家。下面是一本{lo}语法书的全部规则，每条规则前有编号。\n\n## 语法书：\n{book}\n\n## 句子：\n{sentence}\n"
        ),
        Lang::En => format!(
            "You are an expert linguist. Below is every rule of a {lo} grammar book, each with a number.\n\n## Grammar book:\n{book}\n\n## Sentence:\n{sentence}\n"
        ),
    };
    if let Some(d) = dict {
        s.push_str(&format!("\n{}\n{d}\n", dictionary_section(lang)));
    }
    s.push_str(&match lang {
        Lang::Zh => format!(
            "\n请找出把这个句子翻译成{tgt}时需要用到的全部规则，按“Rule 编号”的格式列出，用逗号分隔；如果一条都不需要，回答“无”。"
        ),
        Lang::En => format!(
            "\nList every rule needed to translate the sentence into {tgt} as \"Rule N\", separated by commas. If none is needed, answer \"None\"."
        ),
    });
    s
}

// ---------------------------------------------------------------------------
// Rule conversion

pub fn convert_prompt(lang: Lang, style_goal: &str, function_signature: &str, shots: &[(String, String)], rule: &str) -> String {
    let mut s = match lang {
        Lang::Zh => format!(
            "请把一条语法规则改写成带注释的伪代码函数。函数签名固定为 `{function_signature}`，{style_goal}。函数开头的文档注释要原样包含规则原文，并按编号列出操作步骤。只输出一个函数，不要导入模块，也不要读写文件。\n"
        ),
        Lang::En => format!(
            "Rewrite a grammar rule as a commented pseudo-code function. The signature is fixed as `{function_signature}`; {style_goal}. The docstring must contain the rule text unchanged followed by numbered steps. Output exactly one function, with no imports and no file access.\n"
        ),
    };
    for (i, (text, code)) in shots.iter().enumerate() {
        s.push_str(&match lang {
            Lang::Zh => format!("\n### 示例{}\n规则：{text}\n代码：\n{}\n", i + 1, fenced(code)),
            Lang::En => format!("\n### Example {}\nRule: {text}\nCode:\n{}\n", i + 1, fenced(code)),
        });
    }
    s.push_str(&match lang {
        Lang::Zh => format!("\n### 待改写的规则\n规则：{rule}\n代码："),
        Lang::En => format!("\n### Rule to rewrite\nRule: {rule}\nCode:"),
    });
    s
}

pub fn style_goal(lang: Lang, application: bool) -> &'static str {
    match (lang, application) {
        (Lang::Zh, true) => "函数模拟按这条规则翻译句子的过程，最后返回译文",
        (Lang::Zh, false) => "函数判断这条规则是否适用于给定句子，返回 True 或 False",
        (Lang::En, true) => "the function simulates translating the sentence with the rule and returns the translation",
        (Lang::En, false) => "the function decides whether the rule applies to the sentence and returns True or False",
    }
}

pub fn retry_feedback(lang: Lang, problems: &[String]) -> String {
    let list: Vec<String> = problems.iter().map(|p| format!("- {p}")).collect();
    match lang {
        Lang::Zh => format!("上一次的输出有以下问题：\n{}\n请改正后重新输出完整结果。", list.join("\n")),
        Lang::En => format!("The previous output had these problems:\n{}\nFix them and output the complete result again.", list.join("\n")),
    }
}

// ---------------------------------------------------------------------------
// IGT generation

pub fn igt_prompt(lang: Lang, lo: &str, inventory: &[String], shots: &[(String, String)], dict: &str, sentence: &str) -> String {
    let mut s = match lang {
        Lang::Zh => format!(
            "请为{lo}句子写出逐词注释（IGT）。每个词对应一个注释，注释之间用空格分隔；语法成分使用下列符号：{}。实词用汉语释义，多个成分用“-”连接。\n",
            inventory.join("、")
        ),
        Lang::En => format!(
            "Write an interlinear gloss (IGT) for the {lo} sentence: one gloss per word, separated by spaces. Use these symbols for grammatical morphemes: {}. Gloss content words by meaning and join parts with \"-\".\n",
            inventory.join(", ")
        ),
    };
    for (i, (surface, gloss)) in shots.iter().enumerate() {
        s.push_str(&match lang {
            Lang::Zh => format!("\n示例{}：\n句子：{surface}\nIGT：{gloss}\n", i + 1),
            Lang::En => format!("\nExample {}:\nSentence: {surface}\nIGT: {gloss}\n", i + 1),
        });
    }
    s.push_str(&match lang {
        Lang::Zh => format!("\n词典：{dict}\n句子：{sentence}\nIGT："),
        Lang::En => format!("\nDictionary: {dict}\nSentence: {sentence}\nIGT:"),
    });
    s
}

// ---------------------------------------------------------------------------
// Rule induction

pub fn induce_prompt(lang: Lang, lo: &str, hi: &str, shots: &[(Vec<(String, String)>, String)], pairs: &[(String, String)]) -> String {
    let block = |pairs: &[(String, String)]| -> String {
        pairs
            .iter()
            .map(|(a, b)| match lang {
                Lang::Zh => format!("{lo}：{a}\n{hi}：{b}"),
                Lang::En => format!("{lo}: {a}\n{hi}: {b}"),
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut s = match lang {
        Lang::Zh => format!("下面是若干组{lo}和{hi}的平行句子，它们都体现了同一条语法规律。请用一两句话概括这条语法规则。\n"),
        Lang::En => format!("The {lo}-{hi} sentence pairs below all follow the same grammatical pattern. Summarize that grammar rule in one or two sentences.\n"),
    };
    for (i, (ex, rule)) in shots.iter().enumerate() {
        s.push_str(&match lang {
            Lang::Zh => format!("\n### 示例{}\n{}\n规则：{rule}\n", i + 1, block(ex)),
            Lang::En => format!("\n### Example {}\n{}\nRule: {rule}\n", i + 1, block(ex)),
        });
    }
    s.push_str(&match lang {
        Lang::Zh => format!("\n### 待总结\n{}\n规则：", block(pairs)),
        Lang::En => format!("\n### To summarize\n{}\nRule:", block(pairs)),
    });
    s
}

// ---------------------------------------------------------------------------
// Combining code rules

pub fn combine_func_call_prompt(lang: Lang, helpers: &str, first: &str, second: &str) -> String {
    match lang {
        Lang::Zh => format!(
            "下面有两个已经写好的规则函数：\n{}\n\n请写一个新函数 `apply_rules(source_sentence, dictionary)`，先调用 `{first}`，再把结果交给 `{second}`，最后返回译文。只输出这个新函数。",
            fenced(helpers)
        ),
        Lang::En => format!(
            "Here are two existing rule functions:\n{}\n\nWrite a new function `apply_rules(source_sentence, dictionary)` that calls `{first}` and then passes its result to `{second}`, returning the translation. Output only the new function.",
            fenced(helpers)
        ),
    }
}

pub fn combine_inline_prompt(lang: Lang, first: &str, second: &str) -> String {
    match lang {
        Lang::Zh => format!(
            "下面是两条规则的函数：\n{}\n\n{}\n\n请把两个函数的内容融合成一个新函数 `apply_rules(source_sentence, dictionary)`，让它同时完成两条规则的操作并返回译文。文档注释要保留两条规则的原文。只输出这个新函数。",
            fenced(first),
            fenced(second)
        ),
        Lang::En => format!(
            "Here are the functions of two rules:\n{}\n\n{}\n\nMerge them into one new function `apply_rules(source_sentence, dictionary)` that performs the operations of both rules and returns the translation. Keep both rule texts in the docstring. Output only the new function.",
            fenced(first),
            fenced(second)
        ),
    }
}
