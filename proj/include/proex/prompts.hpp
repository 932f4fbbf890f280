#pragma once

#include <string>

namespace proex {

// One template per reasoning stage. Placeholders: {role} is "user" or
// "item", {num_new} the number of new profiles requested in the last stage.
// Prior stage outputs travel in the user message, not the template.
struct PromptSet {
    std::string version;
    std::string f1;
    std::string f2;
    std::string f3;
    std::string f4;
};

inline PromptSet default_prompts() {
    PromptSet p;
    p.version = "proex-prompts-v1";
    p.f1 =
        "You will serve as an assistant to help me summarize which types of items a "
        "{role} is associated with. I will provide the {role}'s historical records "
        "(titles, descriptions, and reviews). Write a concise profile describing the "
        "{role}'s preferences and characteristics. Answer with the profile text only.";
    p.f2 =
        "Given the original profile of a {role}, extract the positive and negative "
        "aspects it expresses toward the associated items. List the positive aspects, "
        "then the negative aspects.";
    p.f3 =
        "Given the original profile of a {role} and its positive/negative aspects, "
        "analyze the latent preferences that are implied but not stated directly. "
        "Answer with a short analysis.";
    p.f4 =
        "Using the original profile, the positive/negative aspects, and the latent "
        "preference analysis, generate exactly {num_new} new profiles for this {role}. "
        "Each new profile must differ entirely from the original profile in wording "
        "and expression while staying faithful to the same preferences. Answer as a "
        "numbered list, one profile per line, in the form \"1. <profile>\".";
    return p;
}

}  // namespace proex
