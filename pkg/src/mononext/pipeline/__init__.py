"""Training, prediction, visualization and the command line."""
