"""cpgkit: guideline flowcharts to a queryable knowledge model.

Converts flowchart-style guideline pages into a directed-graph knowledge
model, compares model versions to localize changes, and answers natural
language questions over the model via hybrid sparse/dense retrieval.
"""

__version__ = "0.1.0"
