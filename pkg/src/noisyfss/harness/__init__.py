"""Training, evaluation, configuration and the command line."""
