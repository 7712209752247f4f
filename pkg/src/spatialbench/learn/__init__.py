"""Offline training of the learned build decisions and the grid tuner."""
