"""Literature-mining pipeline for chemical food-safety hazards.

Fetches abstracts from Europe PMC, prompts an LLM to extract food-chemical
hazard pairs, links the extracted names to ChEBI identifiers through an
expanded gazetteer, and scores the linked tables against expert gold labels.
"""

__version__ = "0.1.0"
