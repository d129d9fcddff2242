"""Toy speech-to-text-model connector training and its evaluation bench."""

import torch

# Single-threaded math keeps every run bit-for-bit reproducible, including
# across save/resume boundaries. The models here are small enough that the
# extra cores would not help anyway.
torch.set_num_threads(1)

__version__ = "0.1.0"
