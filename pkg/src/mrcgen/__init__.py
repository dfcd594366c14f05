"""mrcgen: generate harder machine-reading-comprehension QA datasets.

Builds difficulty-preference data from QA-backend failures, trains a
pairwise reward model, fine-tunes a toy generation policy with PPO under
format-aware reward shaping, and filters/scores outputs with rule-based
critics, LLM judges and reference-free metrics.
"""

__version__ = "0.1.0"
