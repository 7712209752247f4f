"""Datasets, workloads, runs, reports and the command line."""
