"""Embedded prompt templates: response aggregation and best-of-n ranking.

These texts are versioned resources. Their rendered output is pinned by
golden-file tests, so editing any constant here is a breaking change that
must update the goldens (and bump TEMPLATE_VERSION) deliberately.

Rendering uses sentinel substitution instead of str.format because the
ranker template contains literal JSON braces, and because user-supplied
text must never be re-scanned for placeholders once inserted.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict

TEMPLATE_VERSION = "1"

AGGREGATE_PREAMBLE = (
    "You have been provided with a set of responses from various open-source "
    "models to the latest user query. Your task is to synthesize these "
    "responses into a single, high-quality response. It is crucial to "
    "critically evaluate the information provided in these responses, "
    "recognizing that some of it may be biased or incorrect. Your response "
    "should not simply replicate the given answers but should offer a "
    "refined, accurate, and comprehensive reply to the instruction. Ensure "
    "your response is well-structured, coherent, and adheres to the highest "
    "standards of accuracy and reliability."
)

AGGREGATE_RESPONSE_HEADER = "Responses from models:"

AGGREGATE_ITEM_FORMAT = "{index}. {content}"

RANKER_BODY = (
    "You are a highly efficient assistant, who evaluates and selects the "
    "best large language model (LLMs) based on the quality of their "
    "responses to a given instruction. This process will be used to create "
    "a leaderboard reflecting the most accurate and human-preferred "
    "answers.\n"
    "I require a leaderboard for various large language models. I'll "
    "provide you with prompts given to these models and their corresponding "
    "outputs. Your task is to assess these responses, and select the model "
    "that produces the best output from a human perspective.\n"
    "\n"
    "## Instruction\n"
    "\n"
    "{\n"
    '    "instruction": """{instruction}""",\n'
    "}\n"
    "\n"
    "## Model Outputs\n"
    "\n"
    "Here are the unordered outputs from the models. Each output is "
    "associated with a specific model, identified by a unique model "
    "identifier.\n"
    "\n"
    "{model_outputs}\n"
    "\n"
    "## Task\n"
    "\n"
    "Evaluate the models based on the quality and relevance of their "
    "outputs, and select the model that generated the best output. Answer "
    "by providing the model identifier of the best model. We will use your "
    "output as the name of the best model, so make sure your output only "
    "contains one of the following model identifiers and nothing else (no "
    "quotes, no spaces, no new lines, ...).\n"
    "\n"
    "## Best Model Identifier\n"
)

RANKER_ENTRY_FORMAT = (
    "    {\n"
    '        "model_identifier": "{identifier}",\n'
    '        "output": """{output}"""\n'
    "    }"
)


class AggregationTemplate(BaseModel):
    """Builds the system prompt that asks a model to fuse prior responses.

    The rendered text is: preamble, blank line, response header, then one
    numbered item per response in input order. Response texts are embedded
    verbatim (newlines and all); numbering is not affected by their content.
    """

    model_config = ConfigDict(extra="forbid")

    preamble: str = AGGREGATE_PREAMBLE
    response_header: str = AGGREGATE_RESPONSE_HEADER
    item_format: str = AGGREGATE_ITEM_FORMAT

    def render_system(self, responses: list[str]) -> str:
        if not responses:
            raise ValueError("responses must be non-empty")
        items = []
        for index, content in enumerate(responses, start=1):
            item = self.item_format.replace("{index}", str(index))
            items.append(item.replace("{content}", content))
        return self.preamble + "\n\n" + self.response_header + "\n" + "\n".join(items)


class RankerTemplate(BaseModel):
    """Builds the single user prompt asking a model to pick the best output.

    ``body`` must contain the ``{instruction}`` and ``{model_outputs}``
    sentinels exactly once each; ``entry_format`` must contain
    ``{identifier}`` and ``{output}``.
    """

    model_config = ConfigDict(extra="forbid")

    body: str = RANKER_BODY
    entry_format: str = RANKER_ENTRY_FORMAT

    def render(self, instruction: str, outputs: list[tuple[str, str]]) -> str:
        entries = ",\n".join(
            self.entry_format.replace("{identifier}", identifier).replace("{output}", output)
            for identifier, output in outputs
        )
        block = "{\n" + entries + "\n}"
        # Split first so inserted user text is never re-scanned for sentinels.
        head, tail = self.body.split("{model_outputs}")
        return head.replace("{instruction}", instruction) + block + tail
