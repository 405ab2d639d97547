"""
Query-graph extraction: minimal subgraphs, incidence matrices and batching.
"""
