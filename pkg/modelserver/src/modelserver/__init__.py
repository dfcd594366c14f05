"""HTTP model server multiplexing the five backend roles used by the
question-generation pipeline (generation, extractive QA, masked-LM scoring,
judging, reward scoring), with a deterministic stub mode for testing."""

__version__ = "0.1.0"
