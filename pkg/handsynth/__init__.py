"""Synthetic hand images labelled with joint angles, and a toy regressor."""
