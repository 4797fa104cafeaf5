"""Configuration, corpus, training, evaluation, bias study and CLI."""
