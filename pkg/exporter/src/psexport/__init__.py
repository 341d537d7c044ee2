"""Export pretrained-encoder embeddings and LLM-endpoint outputs into the
surrogate explainer's file formats (.pse, .psa, predictions .jsonl)."""

from .client import EndpointClient, EndpointConfig, build_prompt, parse_answer
from .encoders import HashEncoder, make_encoder
from .jobs import ExportJob, export_attributions, export_embeddings, export_predictions

__version__ = "0.1.0"

__all__ = [
    "EndpointClient",
    "EndpointConfig",
    "ExportJob",
    "HashEncoder",
    "build_prompt",
    "export_attributions",
    "export_embeddings",
    "export_predictions",
    "make_encoder",
    "parse_answer",
]
