"""A small float64 reverse-mode autodiff engine on top of numpy."""

from .core import *
from .ops import *
from .optim import *
from .gradcheck import *
from .rng import *
