"""Stage-1 edge discrimination: prompts, oracles, verdict caching and scoring."""

from hetg.discriminator.oracle import (
    Verdict,
    OracleVerdict,
    VerdictCache,
    discriminate_all,
    edge_f1,
    ground_truth_oracle,
    parse_verdict,
    synthetic_oracle,
)
from hetg.discriminator.prompt import (
    PromptInstance,
    PromptTemplate,
    export_finetune,
    render_prompt,
)
from hetg.discriminator.remote import OracleEndpointConfig, RemoteOracle, query_remote

__all__ = [
    "Verdict",
    "OracleVerdict",
    "VerdictCache",
    "discriminate_all",
    "edge_f1",
    "ground_truth_oracle",
    "parse_verdict",
    "synthetic_oracle",
    "PromptInstance",
    "PromptTemplate",
    "export_finetune",
    "render_prompt",
    "OracleEndpointConfig",
    "RemoteOracle",
    "query_remote",
]
