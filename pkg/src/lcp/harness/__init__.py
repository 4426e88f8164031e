"""Synthetic generators, experiment drivers, file I/O and the command line."""
