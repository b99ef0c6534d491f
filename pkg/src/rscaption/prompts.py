"""Fixed LLM prompt texts used for summarization and long-caption rewriting."""

SUMMARY_PROMPT_1 = (
    "I am creating a RS image-text matching dataset. Each image has three different captions provided by "
    "different people, describing the same visual content from different perspectives. Please summarize the "
    "main features of the following detailed description in a single sentence. The sentence should use "
    "descriptive language with rich adjectives and prepositional phrases, include specific information about "
    "colors and spatial relationships, and maintain a clear and neutral tone. Use a professional and "
    "descriptive writing style, with a concise and content-rich tone. The target audience is researchers in "
    "the field of RS image analysis. Provide only the extracted sentence without any additional explanations "
    "or introductory text."
)

SUMMARY_PROMPT_2 = (
    "I am creating a RS image-text matching dataset. Each image has three different captions provided by "
    "different people, describing the same visual content from different perspectives. Summarize the "
    "following three captions into one detailed sentence, including as many key visual elements as possible. "
    "Use a professional and descriptive writing style. The tone should be concise and informative, suitable "
    "for researchers in the field of RS image analysis. Generate five detailed descriptions, each focusing on "
    "slightly different details to provide complementary information. Each description should be complete and "
    "complementary, ensuring full information coverage. After generating the five detailed descriptions, "
    "randomly select one and output only that version."
)

REWRITE_PROMPT = (
    "I am creating a RS image-long text matching dataset based on an existing RS image-short text matching "
    "dataset. In the short text matching dataset, each image has 5 different short captions provided by "
    "different individuals, describing the same visual content from different perspectives. Please summarize "
    "the following 5 short captions into one detailed long caption, ensuring that the information from each "
    "short caption is included in the long caption. The summarization process must strictly adhere to the "
    "information given in the 5 short captions without any additional extrapolation. Use a professional and "
    "descriptive writing style, with a concise and content-rich tone. The target audience is researchers in "
    "the field of RS image analysis. Do not include any additional explanations or introductory text in your "
    "response."
)
