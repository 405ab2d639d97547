"""
Training, evaluation and synthetic-data services.
"""
