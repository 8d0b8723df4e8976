//! Fixed wording of the prompts generated for library states.
//!
//! `{options}`, `{missed}` and their siblings are replaced with the storage
//! keys chosen by the caller before the text becomes a template.

pub const SINGLE_CHOICE_PROMPT: &str = "Present the following options to the user and help them choose exactly one of them. \
Do not suggest options that are not on the list.\n{options|bullets}";

pub const SINGLE_CHOICE_STARTER: &str =
    "Compose a single, very short message that presents the available options and asks the user to choose one.";

pub const SINGLE_CHOICE_TRIGGER: &str = "Examine the conversation and decide if the user has chosen exactly one of the offered options:\n{options|bullets}";

pub const SINGLE_CHOICE_GUARD: &str =
    "Examine the conversation and confirm that the option chosen by the user can be clearly identified.";

pub const SINGLE_CHOICE_EXTRACTION: &str = "Extract the option the user has chosen from the following list. \
Reply with the chosen option only.\n{options|bullets}";

pub const GAP_INQUIRY_PROMPT: &str = "The user missed the following activity of their plan: {missed}. \
Inquire why they missed it and listen empathetically until they give a reason.";

pub const GAP_INQUIRY_STARTER: &str = "Compose a single, very short message noting that the user missed {missed} \
and asking whether they would like to share the challenges they faced.";

pub const GAP_INQUIRY_TRIGGER: &str =
    "Examine the conversation and decide if the user provided a valid reason for missing {missed}.";

pub const GAP_INQUIRY_GUARD: &str =
    "Examine the conversation and confirm that the reason provided by the user can be extracted as a short statement.";

pub const GAP_INQUIRY_EXTRACTION: &str =
    "Extract the reason the user gave for missing {missed}. Reply with the reason only, as one short sentence.";
