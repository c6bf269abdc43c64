//! Prompt catalog. Every template is reproduced character for character; only the
//! placeholders are interpolated.

use crate::corpus::Document;

/// Shown few-shot demonstrations for counterfactual generation, in order.
pub const COUNTERFACTUAL_SHOTS: [(&str, &str, &str); 3] = [
    ("What is the capital of France?", "Paris", "Lyon"),
    ("What is the highest mountain in the world?", "Mount Everest", "Lhotse"),
    ("Who is the founder of Microsoft?", "Bill Gates", "Steve Jobs"),
];

pub const INSTRUCTION: &str = "As a knowledge-based QA expert, you will provide professional responses based on user's question, utilizing any supplemental knowledge provided to enhance the quality of your response. If the supplemental information is irrelevant to the question, rely on your own expertise to formulate an answer. If you are unsure about the answer, please respond with 'I don't know'.";

/// Parameter-answer elicitation (no context).
pub fn parameter_answer(title: &str, question: &str) -> String {
    format!(
        "This is a question about {title}. Please answer the question {question}. Please provide a direct answer without analysis. If you are unsure or do not know the answer, please respond with 'I don't know'."
    )
}

/// Contextual-ignorance elicitation. Identical wording to [`parameter_answer`].
pub fn contextual_ignorance(title: &str, question: &str) -> String {
    parameter_answer(title, question)
}

pub fn counterfactual(question: &str, realistic_answer: &str) -> String {
    let mut out = String::from(
        "Please generate speciously plausible but incorrect answer to the question. Provide only the false answers; do not reiterate the queries.\n\n",
    );
    for (q, a, fake) in COUNTERFACTUAL_SHOTS {
        out.push_str(&format!("Question: {q} Answer: {a}. Fake answer: {fake}.\n\n"));
    }
    out.push_str(&format!("Question: {question} Answer: {realistic_answer} Fake answer:"));
    out
}

pub fn overinclusion(question: &str, potential_answer: &str, context: &str) -> String {
    format!(
        "Please select a word from the provided context as an alternative answer to this question.\n\n\
         Question: {question}\n\n\
         Potential answer: {potential_answer}\n\n\
         Context: {context}\n\n\
         Please follow these requirements:\n\n\
         1. The answer must not be the same as the potential answer.\n\n\
         2. The alternative answer does not need to be correct, but it must appear in the context.\n\n\
         3. The alternative answer must be in a form that can answer the question and should be as reasonable as possible."
    )
}

/// The part of the instruction-tuning prompt that follows the instruction paragraph.
pub fn instruction_tuning_body(context: &str, question: &str) -> String {
    format!("[Supplemental Knowledge] {context}\n\n[User's Question] {question}\n\n[Answer]")
}

pub fn instruction_tuning(context: &str, question: &str) -> String {
    format!("[Instruction] {INSTRUCTION}\n\n{}", instruction_tuning_body(context, question))
}

/// Serializes context documents: each prefixed by its title, separated by blank lines.
pub fn serialize_context<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    docs.into_iter()
        .map(|d| format!("{}: {}", d.title, d.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_prompt_is_verbatim() {
        assert_eq!(
            parameter_answer("Geography", "What is the capital of France?"),
            "This is a question about Geography. Please answer the question What is the capital of France?. \
             Please provide a direct answer without analysis. If you are unsure or do not know the answer, \
             please respond with 'I don't know'."
        );
    }

    #[test]
    fn counterfactual_prompt_ends_with_open_slot() {
        let p = counterfactual("What is the highest mountain in the world?", "Mount Everest");
        assert!(p.starts_with("Please generate speciously plausible but incorrect answer to the question."));
        assert!(p.contains("Question: What is the capital of France? Answer: Paris. Fake answer: Lyon.\n\n"));
        assert!(p.ends_with("Question: What is the highest mountain in the world? Answer: Mount Everest Fake answer:"));
    }

    #[test]
    fn instruction_prompt_embeds_instruction() {
        let p = instruction_tuning("ctx", "q?");
        assert!(p.contains("utilizing any supplemental knowledge provided"));
        assert!(p.ends_with("[Supplemental Knowledge] ctx\n\n[User's Question] q?\n\n[Answer]"));
        assert_eq!(p, format!("[Instruction] {INSTRUCTION}\n\n{}", instruction_tuning_body("ctx", "q?")));
    }

    #[test]
    fn overinclusion_prompt_lists_requirements() {
        let p = overinclusion("q?", "Kamala Harris", "ctx");
        assert!(p.contains("Potential answer: Kamala Harris\n\nContext: ctx\n\n"));
        assert!(p.contains("2. The alternative answer does not need to be correct, but it must appear in the context."));
    }
}
