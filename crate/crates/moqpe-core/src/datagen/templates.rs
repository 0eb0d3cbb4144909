//! The ten embedded question templates used to elicit instruction-tuning
//! answers from a multimodal teacher, and their rendering into
//! chat-completions message lists.

use crate::error::{Error, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKey {
    Basics,
    MorphologyStructure,
    SizeDistribution,
    SurfaceCharacteristics,
    CompositionElements,
    InteractionsBoundaries,
    ExternalEnvironment,
    ImageTechnique,
    FunctionalFeatures,
    ContextApplication,
}

impl TemplateKey {
    pub const ALL: [TemplateKey; 10] = [
        TemplateKey::Basics,
        TemplateKey::MorphologyStructure,
        TemplateKey::SizeDistribution,
        TemplateKey::SurfaceCharacteristics,
        TemplateKey::CompositionElements,
        TemplateKey::InteractionsBoundaries,
        TemplateKey::ExternalEnvironment,
        TemplateKey::ImageTechnique,
        TemplateKey::FunctionalFeatures,
        TemplateKey::ContextApplication,
    ];

    pub fn parse(s: &str) -> Result<TemplateKey> {
        TemplateKey::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown template key `{s}`")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            TemplateKey::Basics => "Basics",
            TemplateKey::MorphologyStructure => "MorphologyStructure",
            TemplateKey::SizeDistribution => "SizeDistribution",
            TemplateKey::SurfaceCharacteristics => "SurfaceCharacteristics",
            TemplateKey::CompositionElements => "CompositionElements",
            TemplateKey::InteractionsBoundaries => "InteractionsBoundaries",
            TemplateKey::ExternalEnvironment => "ExternalEnvironment",
            TemplateKey::ImageTechnique => "ImageTechnique",
            TemplateKey::FunctionalFeatures => "FunctionalFeatures",
            TemplateKey::ContextApplication => "ContextApplication",
        }
    }

    pub fn text(&self) -> &'static str {
        match self {
            TemplateKey::Basics => "**Basics** - This image depicts a nanomaterial. What specific type of nanomaterial is it? Additionally, what is the scale or resolution - that is, what real-world length does one unit of measurement in the image correspond to?",
            TemplateKey::MorphologyStructure => "**Morphology and Structure** - Can you describe the overall shape and morphology of the nanomaterials depicted in the image? - Are there any visible layers, phases, or distinct domains within the nanomaterials? - Do the nanomaterials exhibit a consistent size and shape throughout, or do they display variability in these aspects?",
            TemplateKey::SizeDistribution => "**Size and Distribution** - Can you estimate the approximate size or size range of the individual nanostructures depicted in the image? - Additionally, how are the nanomaterials distributed - are they evenly spaced, clustered, or randomly placed? - Finally, is there any visible evidence of aggregation or bundling among the nanostructures?",
            TemplateKey::SurfaceCharacteristics => "**Surface Characteristics** - When examining the nanomaterials in the image, what are their surface textures like - are they predominantly smooth, rough, or do they possess distinct textures? - Additionally, are there any noticeable imperfections, such as defects, pores, or impurities, visible on the surfaces of these nanomaterials?",
            TemplateKey::CompositionElements => "**Composition and Elements** - In the provided image, can we identify any evidence of compositional variations, such as changes in color, brightness, or contrast that might indicate different components? - Additionally, are there any discernible labels or markers within the image that specifically point to the presence of certain elements or compounds?",
            TemplateKey::InteractionsBoundaries => "**Interactions and Boundaries** - Describe how the individual nanostructures visually interact with one another. For example, do they appear to be touching, fused together, or fully separate? - Examine the boundaries between nanostructures. Can you clearly distinguish boundaries between different structures or phases? - Or do they blend together without defined borders?",
            TemplateKey::ExternalEnvironment => "**External Environment** - In the provided image, can you identify any signs of interaction between the nanomaterials and their surrounding environment or matrix, which might include solvents, polymers, or other materials? - Additionally, are there any discernible structures or objects present in the image that are not nanomaterials? If so, please describe these elements?",
            TemplateKey::ImageTechnique => "**Image Technique and Modifications** - Can you identify the specific imaging technique, such as Scanning Electron Microscopy (SEM) or Transmission Electron Microscopy (TEM), used to capture this image of nanomaterials? - Additionally, were there any post-processing techniques or modifications applied, including but not limited to false coloring or 3D rendering?",
            TemplateKey::FunctionalFeatures => "**Functional Features** - Can you identify any specific functional elements in the image, like active sites or regions with distinct properties? - Additionally, does the image depict any dynamic processes taking place within the subject, or is it primarily a static representation?",
            TemplateKey::ContextApplication => "**Context and Application** - What is the primary intended use or application of the nanomaterials as depicted in the image, and is the representation of these nanomaterials based on actual experimental samples, or are they theoretical or simulation-based representations?",
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ContentPart>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(tag = "type")]
pub enum ContentPart {
    #[serde(rename = "text")]
    Text { text: String },
    #[serde(rename = "image_url")]
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ImageUrl {
    pub url: String,
}

const SYSTEM_PROMPT: &str = "You are an electron microscopy analyst. Answer questions about the attached micrograph precisely, grounding every statement in the visible image content.";

/// Context rendered into a request: a base64 image plus an optional style
/// directive ("concise" or "detailed" answers).
#[derive(Debug, Clone, Default)]
pub struct PromptContext {
    pub image_b64: Option<String>,
    pub image_mime: Option<String>,
    pub answer_style: Option<String>,
}

/// System + user messages embedding the verbatim template and the image.
pub fn render_prompt(key: TemplateKey, ctx: &PromptContext) -> Vec<ChatMessage> {
    let mut user_parts = Vec::new();
    let mut question = key.text().to_string();
    if let Some(style) = &ctx.answer_style {
        question.push_str(&format!(" Respond with a {style} answer."));
    }
    user_parts.push(ContentPart::Text { text: question });
    if let Some(b64) = &ctx.image_b64 {
        let mime = ctx.image_mime.as_deref().unwrap_or("image/x-portable-graymap");
        user_parts.push(ContentPart::ImageUrl {
            image_url: ImageUrl { url: format!("data:{mime};base64,{b64}") },
        });
    }
    vec![
        ChatMessage {
            role: "system".into(),
            content: vec![ContentPart::Text { text: SYSTEM_PROMPT.into() }],
        },
        ChatMessage { role: "user".into(), content: user_parts },
    ]
}
